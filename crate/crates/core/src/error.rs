use thiserror::Error;

use crate::data::split::ConstraintReport;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] tdr_tensor::TensorError),

    #[error(transparent)]
    Audio(#[from] tdr_audio::AudioError),

    #[error("config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("lookup: {0}")]
    Lookup(String),

    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },

    #[error("checkpoint field {field}: {reason}")]
    Checkpoint { field: String, reason: String },

    #[error("non-finite loss at step {step}; first non-finite group: {group}")]
    NonFinite { step: u64, group: String },

    #[error("index build: {0}")]
    Index(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("split constraints violated: {0}")]
    Split(ConstraintReport),

    #[error("segmentation: sequence of {frames} frames is shorter than one {clip}-frame clip")]
    TooShort { frames: usize, clip: usize },

    #[error("evaluation aborted, {} missing item(s): {}", .0.len(), .0.join("; "))]
    Missing(Vec<String>),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
