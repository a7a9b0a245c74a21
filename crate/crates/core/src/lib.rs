//! Learned Lagrange coded computation for distributed image classification.
//!
//! A master encodes a group of `K` images into `N` shares
//! `X̃_n = E(α_n) = Σ_g C_g α_n^g`, where the matrix coefficients `C_g` are
//! produced by neural networks from the images. Each worker applies a
//! computation `H` that keeps `D = H ∘ E` polynomial in `α`, so the master can
//! interpolate `D` from the first `R` results and read off class scores at the
//! fixed points `β_k = k / K`.
//!
//! Module map:
//! - [`tensor`], [`autodiff`], [`optim`], [`gradcheck`]: training engine
//! - [`lagrange`]: barycentric interpolation and the exact LCC oracle
//! - [`nets`]: network architectures, parameter counts, checkpoints
//! - [`scheme`]: encoder, worker computations, decoder, training, evaluation
//! - [`data`]: IDX ingestion and the grouped minibatch sampler
//! - [`simulator`]: straggler models, in-process and loopback-socket runs
//! - [`config`]: the versioned configuration file

pub mod autodiff;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod lagrange;
pub mod nets;
pub mod optim;
pub mod scheme;
pub mod simulator;
pub mod tensor;

pub use autodiff::{Grads, Graph, ParamId, ParamStore, Var};
pub use error::{CheckpointError, Error, IdxError, Result};
pub use tensor::{Scalar, Tensor};
