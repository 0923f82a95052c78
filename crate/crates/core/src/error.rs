use std::io;

use thiserror::Error;

/// Errors raised across the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("no propagation path reaches point ({x:.3}, {y:.3}, {z:.3})")]
    NoPath { x: f64, y: f64, z: f64 },

    #[error("empty path set")]
    EmptyPaths,

    #[error("instance too large for the exact solver ({0} cells > 10000); use Sinkhorn")]
    TooLarge(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
