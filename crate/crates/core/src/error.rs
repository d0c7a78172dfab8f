use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dataset too small: need at least {min} records, got {n}")]
    DatasetTooSmall { n: usize, min: usize },

    #[error("few-shot sampling failed: {0}")]
    Sampling(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("prompt parse error: {0}")]
    Prompt(String),

    #[error("input of {len} tokens exceeds context length {max}")]
    ContextLength { len: usize, max: usize },

    #[error("training diverged: {0}")]
    Training(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("model file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
