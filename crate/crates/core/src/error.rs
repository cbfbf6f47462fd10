use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Malformed input file (KITTI records, stream files, checkpoints, configs).
    #[error("format error: {0}")]
    Format(String),

    /// Encoded data is inconsistent. `offset` is the byte position where decoding gave up.
    #[error("corrupt data at byte {offset}: {reason}")]
    Corruption { offset: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },

    #[error("undefined: {0}")]
    Undefined(String),
}

impl Error {
    pub(crate) fn corruption(offset: usize, reason: impl Into<String>) -> Self {
        Error::Corruption {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(reason: impl Into<String>) -> Self {
        Error::Format(reason.into())
    }
}
