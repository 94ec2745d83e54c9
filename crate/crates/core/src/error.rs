//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// The variants split along the CLI exit-code contract: configuration and
/// input problems map to exit code 1, numerical failures to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    /// The caller handed us something structurally wrong: bad shapes,
    /// non-finite entries, out-of-range indices, invalid hyperparameters.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two matrices that must agree in shape do not.
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {got_rows}x{got_cols} ({context})")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        got_rows: usize,
        got_cols: usize,
        context: &'static str,
    },

    /// An iteration produced NaN/Inf or failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Configuration file problems (missing file, malformed JSON, unknown
    /// fields, semantically invalid values).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the CLI: 1 for validation errors, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
