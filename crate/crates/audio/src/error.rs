use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("clip has {len} samples, shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },

    #[error("clip lasts {got:.4} s, expected {expected:.1} s")]
    WrongDuration { expected: f64, got: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("feature stats: {0}")]
    Stats(String),

    #[error(transparent)]
    Tensor(#[from] tdr_tensor::TensorError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AudioError>;
