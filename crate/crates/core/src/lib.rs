//! Text-to-dance retrieval: encoders, fusion, contrastive training,
//! gallery ranking and the data pipeline.

pub mod blender;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod loss;
pub mod model;
pub mod retrieval;
pub mod text;
pub mod train;

pub use config::{AlignMode, FusionMode, ModelConfig, TextProviderKind, TrainConfig};
pub use error::{CoreError, Result};
pub use model::{Model, ParamGroup};
pub use retrieval::{GalleryIndex, Metrics, MetricsReport, RankResult};
pub use text::{TextQuery, TokenizedText, Vocabulary};
pub use train::TrainState;
