use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed volume header {path}: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("payload size mismatch: header declares {expected} voxels, payload holds {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("non-finite voxel at linear index {0}")]
    NonFinite(usize),
    #[error("invalid dimensions: {0}")]
    Dims(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("degenerate histogram: input is constant")]
    DegenerateHistogram,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
