//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (degenerate ranges, inconsistent dimensions).
    #[error("config error: {0}")]
    Config(String),

    /// Invalid argument to an operation (counts out of range, empty pools).
    #[error("argument error: {0}")]
    Argument(String),

    /// Malformed or unsupported file contents.
    #[error("format error: {0}")]
    Format(String),

    /// Tensor/matrix shape mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// An internal invariant was violated.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
