//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by loss models, geometry, optimizers, and oracles.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong dimension for the operation.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// An input violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The operation is not defined for this input (e.g. Hessian of an MLP).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Invalid configuration; the message names the failed condition.
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative routine failed to converge. Carries the message and,
    /// where meaningful, the last iterate.
    #[error("numerical failure: {msg}")]
    Numerical { msg: String, last_iterate: Vec<f64> },

    /// Input data could not be parsed. Row and column are 1-based.
    #[error("parse error at row {row}, column {column}: {msg}")]
    Parse {
        row: usize,
        column: String,
        msg: String,
    },

    /// I/O failure while reading data files.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(expected: usize, got: usize, context: &'static str) -> Self {
        Error::DimensionMismatch {
            expected,
            got,
            context,
        }
    }
}
