//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by vector algebra, models, data generation, and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right} in {op}")]
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("weights sum to zero")]
    ZeroTotalWeight,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
