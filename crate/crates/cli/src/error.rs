use std::path::PathBuf;

use tdr_core::CoreError;
use tdr_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Audio(#[from] tdr_audio::AudioError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config { .. } | Self::Core(CoreError::Config(_)) => EXIT_USAGE,
            Self::Core(CoreError::NonFinite { .. })
            | Self::Core(CoreError::Tensor(TensorError::Degenerate { .. }))
            | Self::Tensor(TensorError::Degenerate { .. }) => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        }
    }
}
