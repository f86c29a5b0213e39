//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Filesystem failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file exists but does not decode as a supported raster format.
    #[error("image format error on {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A caller-supplied value violates an operation's preconditions.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Manifest text that does not follow the line grammar.
    #[error("manifest parse error at {path}:{line}: {message}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Checkpoint or map file that is truncated, corrupt, or shape-incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training aborted (non-finite loss, unusable configuration).
    #[error("training error: {0}")]
    Training(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
