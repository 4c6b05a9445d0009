use std::path::PathBuf;

use thiserror::Error;

use crate::model::TaskId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in parameter `{name}` at index {index}")]
    NonFinite { name: String, index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("degenerate plane: {0}")]
    DegeneratePlane(String),

    #[error("no output head for task {0}")]
    MissingHead(TaskId),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("label {label} out of range for task {task} with {classes} classes")]
    LabelOutOfRange { task: TaskId, label: usize, classes: usize },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("loss is not finite: {0}")]
    NonFiniteLoss(String),

    #[error("training diverged on task {task}, epoch {epoch}, step {step}: loss {loss}")]
    Diverged { task: TaskId, epoch: usize, step: usize, loss: f64 },

    #[error("non-finite value during SAM {stage} pass")]
    SamNonFinite { stage: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("incomplete score matrix: {0}")]
    Incomplete(String),

    #[error("warm-start corpus: {0}")]
    WarmStart(String),

    #[error("csv {path}:{line}: {message}")]
    Csv { path: PathBuf, line: u64, message: String },

    #[error("schema: {0}")]
    Schema(String),

    #[error("config: {path}: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}
