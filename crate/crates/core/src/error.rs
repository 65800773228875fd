use std::path::PathBuf;

use thiserror::Error;

use crate::segbackend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("geometry does not fit: {0}")]
    GeometryOverflow(String),

    #[error("empty range: {0}")]
    EmptyRange(String),

    #[error("too many connected components ({0}) for an 8-bit label map")]
    TooManyComponents(usize),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("malformed volgrid file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
