use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward called on a tape with no recorded forward pass")]
    BackwardWithoutForward,

    #[error("{context}: {source}")]
    Io {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status for this error: 2 configuration, 3 data, 4
    /// numeric abort, 1 for internal misuse.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::NotPowerOfTwo(_) => 2,
            Error::NonFinite(_) => 4,
            Error::BackwardWithoutForward => 1,
            Error::Data(_) | Error::Shape { .. } | Error::Io { .. } | Error::Format { .. } | Error::Json(_) | Error::Csv(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            context: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
