use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure categories surfaced by the pipeline.
///
/// The CLI maps each variant onto a process exit code, so new variants
/// should pick the closest existing category.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed configuration or arguments.
    #[error("config: {0}")]
    Config(String),

    /// Inputs violate a data contract (ids, annotations, dimensions).
    #[error("validation: {0}")]
    Validation(String),

    /// A trajectory cannot host the requested window geometry.
    #[error("validation: trajectory `{id}` too short ({len} frames, need {needed})")]
    TooShort { id: String, len: usize, needed: usize },

    /// Loss or parameters became non-finite.
    #[error("numerical: {0}")]
    Numerical(String),

    #[error("io: {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io: {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A versioned file carries a version this build does not read.
    #[error("validation: {path}: unsupported version `{found}` (expected `{expected}`)")]
    Version {
        path: PathBuf,
        found: String,
        expected: String,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
