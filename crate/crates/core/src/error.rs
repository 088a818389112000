use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// The CLI maps [`Error::is_input_error`] to exit status 2 and everything
/// else to exit status 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("offset range {start}..{end} is out of bounds for text of {len} code points")]
    OffsetOutOfRange { start: usize, end: usize, len: usize },

    #[error("date {0} is outside the supported range 1800-01-01..=2200-12-31")]
    DateOutOfRange(String),

    #[error("invalid date: {0}")]
    InvalidDate(String),

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown id `{0}`")]
    MissingId(String),

    #[error("could not allocate a unique pseudonymous id for `{0}` after 8 retries")]
    IdCollision(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("npy format error: {0}")]
    Npy(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for malformed or inconsistent inputs, false for failures of the
    /// computation itself.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Numerical(_) | Error::IdCollision(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
