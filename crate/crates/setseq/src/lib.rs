//! Sequence-of-sets forecasting with set-transformer attention stacks.
//!
//! The crate implements an encoder/decoder architecture over scenes of
//! interacting agents: an interleaved temporal/social attention encoder, a
//! discrete-latent multimodal decoder driven by learnable seed parameters,
//! exact-posterior EM training with mode-entropy regularization, synthetic
//! datasets, trajectory metrics, and a decoding-throughput benchmark.
//!
//! Everything runs on a small reverse-mode autodiff engine over dense f64
//! tensors ([`tensor`]); no external ML framework is involved.

pub mod attention;
pub mod bench;
pub mod data;
pub mod error;
pub mod fsutil;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod parallel;
pub mod plot;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{NodeId, Tensor, ValueGraph};
