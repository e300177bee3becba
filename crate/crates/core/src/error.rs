use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library. The CLI maps these onto exit codes,
/// so the variant split mirrors the failure categories it reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error("missing metadata for subjects: {}", .0.join(", "))]
    MissingMetadata(Vec<String>),

    #[error("numeric failure: {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
