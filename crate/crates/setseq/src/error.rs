//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for an operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An axis index is out of range for a tensor's rank.
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },

    /// A numeric precondition failed (NaN input, non-finite density, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A model or training configuration is invalid.
    #[error("invalid config: {0}")]
    Config(String),

    /// A scene does not satisfy its structural invariants.
    #[error("invalid scene: {0}")]
    Scene(String),

    /// Training diverged (non-finite loss).
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A dataset or checkpoint file failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A file's format version is not supported.
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

pub type Result<T> = std::result::Result<T, Error>;
