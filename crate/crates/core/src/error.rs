use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and a parameter) disagree on the named axes.
    #[error("dimension mismatch on {axes}: {detail}")]
    Dimension { axes: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value in loss term `{term}` at step {step}")]
    NonFinite { term: String, step: u64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest {path}, row {row}: {message}")]
    Manifest {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(axes: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            axes: axes.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
