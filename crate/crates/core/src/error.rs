use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PalError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("unknown {kind} id `{id}`")]
    DanglingId { kind: &'static str, id: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("untestable course: {0}")]
    Untestable(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("no vector for video `{0}`")]
    MissingVector(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, PalError>;

impl PalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PalError::Io {
            path: path.into(),
            source,
        }
    }
}
