use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension error: {0}")]
    Shape(String),

    /// A configuration value is outside what the pipeline supports.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data violates a precondition.
    #[error("input error: {0}")]
    Input(String),

    /// An API was used out of order (e.g. backward twice).
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN or infinity produced by an operation.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Too few worker results to interpolate.
    #[error("unrecoverable: need R = {required} results, have {available}")]
    Unrecoverable { required: usize, available: usize },

    /// Training loss became NaN/Inf.
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged { epoch: usize, step: usize, reason: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {found:?}, expected \"LCC1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("wrong magic 0x{found:08x} at byte 0, expected 0x{expected:08x}")]
    WrongMagic { found: u32, expected: u32 },
    #[error("truncated IDX data at byte {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("unexpected IDX dimensions at byte {offset}: {detail}")]
    Dimensions { offset: usize, detail: String },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at byte {offset} is out of range")]
    LabelRange { label: u8, offset: usize },
}
