//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file or document does not match its declared schema.
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally valid input with inconsistent content.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A numeric failure (non-finite value, vanishing normalizer, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training hit a non-finite loss; parameters were rolled back to the
    /// last finite epoch snapshot.
    #[error("training diverged at epoch {epoch}; parameters rolled back to last good state")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invalid_data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }
}
