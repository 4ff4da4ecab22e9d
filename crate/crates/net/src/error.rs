use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] octa_core::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl NetError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NetError::Shape { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, NetError>;
