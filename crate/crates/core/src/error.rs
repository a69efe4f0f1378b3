use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the laboratory.
///
/// Variants are split along the CLI's exit-code boundary: [`Error::is_config`]
/// errors map to exit code 1, data errors (I/O, formats, shapes) to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("io: {0}")]
    RawIo(#[from] io::Error),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by the user's configuration rather than by data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidParam(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
