use thiserror::Error;

/// Errors produced by sketch, privacy and training operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of bounds for dimension {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("sketches cannot be merged: {field} differs ({left} vs {right})")]
    MergeIncompatible {
        field: &'static str,
        left: u64,
        right: u64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
