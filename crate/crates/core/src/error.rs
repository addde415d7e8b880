use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// A single malformed input row. Lines are 1-based and count the header.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Bad or missing configuration, including missing input paths.
    #[error("config error: {0}")]
    Config(String),

    /// A file that cannot be interpreted at all (missing header, conflicting tower map, ...).
    #[error("format error in {file}: {message}")]
    Format { file: String, message: String },

    /// A row-level problem promoted to fatal by strict mode.
    #[error("row error in {file}, {error}")]
    Row { file: String, error: RowError },

    /// Inputs that are well-formed but cannot support the requested computation.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Model(#[from] crate::model::ModelError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn format(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command line: 1 config, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Format { .. } | Error::Row { .. } | Error::Invalid(_) | Error::Model(_) | Error::Csv(_) => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
            Error::Io { .. } | Error::Internal(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
