//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by construction and verification routines.
#[derive(Debug, Error)]
pub enum ConvintError {
    /// Block or matrix shapes are inconsistent.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A contract on an input value was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A configuration failed a structural check (rank, closure, factor range).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Geometric degeneracy that prevents a computation.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An iterative solver did not reach its tolerance.
    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    /// A requested capability is unavailable (e.g. missing Jacobian).
    #[error("capability unavailable: {0}")]
    Capability(String),

    /// Grid resolution too coarse for the requested construction.
    #[error("resolution too coarse: {0}")]
    Resolution(String),

    /// I/O and serialization failures.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failures.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, ConvintError>;

impl ConvintError {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        ConvintError::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn pre(msg: impl ToString) -> Self {
        ConvintError::Precondition(msg.to_string())
    }
}
