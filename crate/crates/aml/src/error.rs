//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the estimation primitives.
#[derive(Debug, Error)]
pub enum AmlError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{context}: need at least {min} element(s), got {got}")]
    InsufficientData {
        context: &'static str,
        min: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

pub type Result<T> = std::result::Result<T, AmlError>;
