use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("degenerate face {face}: cross-product norm {norm:e}")]
    DegenerateFace { face: usize, norm: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by the data being processed rather than by
    /// numerical trouble or misuse.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format { .. }
                | Error::Validation(_)
                | Error::Checkpoint(_)
                | Error::EmptyInput(_)
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::DegenerateFace { .. })
    }
}
