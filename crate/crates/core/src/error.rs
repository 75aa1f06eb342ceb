use thiserror::Error;

pub type Result<T, E = FclError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FclError {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: model expects {expected} inputs, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("negative fisher entry at index {index}")]
    NegativeFisher { index: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("too few samples to split: {n} (need at least {min})")]
    TooFewSamples { n: usize, min: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training diverged (client {client}, task {task}, round {round}): {detail}")]
    Divergence {
        client: usize,
        task: usize,
        round: usize,
        detail: String,
    },

    #[error("client {client} has no active data")]
    MissingData { client: usize },

    #[error("raw data of client {client}, task {task} was destroyed at consolidation")]
    DataDestroyed { client: usize, task: usize },

    #[error("empty update set")]
    EmptyUpdates,

    #[error("matrix error: {0}")]
    Matrix(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl FclError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        FclError::Config(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        FclError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
