//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error enum.
#[derive(Debug, Error)]
pub enum ApexError {
    /// Vector lengths or architecture dimensions disagree.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The operation is undefined at this time value (division by `t` or `1-t`).
    #[error("{op} is singular at t = {t}; defined on {domain}")]
    SingularTime {
        op: &'static str,
        t: f64,
        domain: &'static str,
    },

    /// A computation produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Run configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint file is malformed, truncated, or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ApexError>;

pub(crate) fn ensure_same_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(ApexError::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
