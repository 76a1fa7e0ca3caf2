//! Run configuration: a TOML document merged with command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tdr_core::data::{SplitRatios, SynthConfig};
use tdr_core::{FusionMode, ModelConfig, TextProviderKind, TrainConfig};

use crate::error::{CliError, Result};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Precomputed sentence embeddings for the file-backed text provider.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextFiles {
    pub matrix: Option<PathBuf>,
    pub index: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// The only seed: corpus generation, splits, initialization, sampling
    /// and dropout all derive from it.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub split: SplitRatios,
    pub text: TextFiles,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub fusion: Option<FusionMode>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        toml::from_str(&text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.message().to_string() })
    }

    /// Applies `flags`, propagates the seed and validates every section.
    pub fn resolve(mut self, flags: &Overrides, source: Option<&Path>) -> Result<Self> {
        if let Some(s) = flags.seed {
            self.seed = s;
        }
        if let Some(e) = flags.epochs {
            self.train.epochs = e;
        }
        if let Some(f) = flags.fusion {
            self.model.fusion = f;
        }
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        let invalid = |e: tdr_core::CoreError| CliError::Config {
            path: source.map(Path::to_path_buf).unwrap_or_else(|| "<defaults>".into()),
            message: e.to_string(),
        };
        self.model.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        self.synth.validate().map_err(invalid)?;
        self.split.validate().map_err(invalid)?;
        if self.model.text_provider == TextProviderKind::File && (self.text.matrix.is_none() || self.text.index.is_none()) {
            return Err(invalid(tdr_core::CoreError::Config("the file text provider needs text.matrix and text.index".into())));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(CliError::io(path))
    }
}
