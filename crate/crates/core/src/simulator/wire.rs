//! Length-prefixed frames exchanged between master and workers.
//!
//! ```text
//! "LCCW" | type u8 | batch u32 BE | worker u16 BE | α f64 BE | len u32 BE | payload
//! ```
//!
//! `len` counts payload bytes. SHARE, RESULT and COEFFS payloads are
//! row-major little-endian `f32`; an ERROR payload is a UTF-8 message.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LCCW";
pub const HEADER_LEN: usize = 4 + 1 + 4 + 2 + 8 + 4;
/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD: usize = 1 << 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageType {
    Share = 0x01,
    Result = 0x02,
    Coeffs = 0x03,
    Error = 0x7F,
}

impl MessageType {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(Self::Share),
            0x02 => Some(Self::Result),
            0x03 => Some(Self::Coeffs),
            0x7F => Some(Self::Error),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: MessageType,
    pub batch: u32,
    pub worker: u16,
    pub alpha: f64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn with_floats(kind: MessageType, batch: u32, worker: u16, alpha: f64, values: &[f32]) -> Self {
        let mut payload = Vec::with_capacity(values.len() * 4);
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        Self { kind, batch, worker, alpha, payload }
    }

    pub fn error(batch: u32, worker: u16, message: &str) -> Self {
        Self { kind: MessageType::Error, batch, worker, alpha: 0.0, payload: message.as_bytes().to_vec() }
    }

    pub fn floats(&self) -> Result<Vec<f32>> {
        if self.payload.len() % 4 != 0 {
            return Err(Error::Protocol(format!("payload of {} bytes is not a whole number of f32", self.payload.len())));
        }
        Ok(self.payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.batch.to_be_bytes());
        out.extend_from_slice(&self.worker.to_be_bytes());
        out.extend_from_slice(&self.alpha.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    w.write_all(&frame.to_bytes())?;
    w.flush()?;
    Ok(())
}

/// Next frame, or `None` on a clean end of stream before any header byte.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol(format!("stream ended inside a frame header ({filled} bytes)"))),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    if &header[..4] != MAGIC {
        return Err(Error::Protocol(format!("bad frame magic {:?}", &header[..4])));
    }
    let kind = MessageType::from_byte(header[4])
        .ok_or_else(|| Error::Protocol(format!("unknown message type 0x{:02x}", header[4])))?;
    let batch = u32::from_be_bytes(header[5..9].try_into().unwrap());
    let worker = u16::from_be_bytes(header[9..11].try_into().unwrap());
    let alpha = f64::from_be_bytes(header[11..19].try_into().unwrap());
    let len = u32::from_be_bytes(header[19..23].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("payload of {len} bytes exceeds the {MAX_PAYLOAD}-byte limit")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Protocol(format!("stream ended inside a {len}-byte payload")),
        _ => e.into(),
    })?;
    Ok(Some(Frame { kind, batch, worker, alpha, payload }))
}
