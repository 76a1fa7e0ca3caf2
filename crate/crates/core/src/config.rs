use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// How the blender combines the aligned music and motion streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// `[H_a + H_m ; H_a ⊙ H_m]`
    #[default]
    Full,
    Add,
    Mul,
}

impl std::str::FromStr for FusionMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "add" => Ok(Self::Add),
            "mul" => Ok(Self::Mul),
            other => Err(CoreError::Config(format!("unknown fusion mode {other:?} (full|add|mul)"))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Add => "add",
            Self::Mul => "mul",
        })
    }
}

/// Temporal alignment of streams with different lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    /// Linearly resample the longer stream onto the shorter one.
    #[default]
    Interpolate,
    /// Keep the leading frames of the longer stream.
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TextProviderKind {
    /// Trainable mean of learned token embeddings.
    #[default]
    Fallback,
    /// Precomputed sentence embeddings keyed by caption id.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Shared embedding width.
    pub d: usize,
    /// Width of the text provider's output.
    pub d_c: usize,
    pub heads: usize,
    pub layers_per_stage: usize,
    pub stages: usize,
    pub ffn_mult: usize,
    pub adapter_hidden: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub music_dim: usize,
    pub motion_dim: usize,
    pub ln_eps: f64,
    pub fusion: FusionMode,
    pub align: AlignMode,
    pub text_provider: TextProviderKind,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 128,
            d_c: 64,
            heads: 4,
            layers_per_stage: 1,
            stages: 3,
            ffn_mult: 4,
            adapter_hidden: 128,
            dropout: 0.1,
            max_len: 1024,
            music_dim: tdr_audio::FEATURE_DIM,
            motion_dim: crate::data::motion::POSE_DIM,
            ln_eps: 1e-5,
            fusion: FusionMode::Full,
            align: AlignMode::Interpolate,
            text_provider: TextProviderKind::Fallback,
            vocab_size: 1,
        }
    }
}

impl ModelConfig {
    pub fn d_k(&self) -> usize {
        self.d / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!("d ({}) must be a positive multiple of heads ({})", self.d, self.heads));
        }
        if self.stages != 3 {
            return fail(format!("stages must be 3 for the T -> T/8 contract, got {}", self.stages));
        }
        if self.layers_per_stage == 0 || self.ffn_mult == 0 || self.adapter_hidden == 0 || self.d_c == 0 {
            return fail("layers_per_stage, ffn_mult, adapter_hidden and d_c must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.max_len == 0 || self.music_dim == 0 || self.motion_dim == 0 || self.vocab_size == 0 {
            return fail("max_len, music_dim, motion_dim and vocab_size must be positive".into());
        }
        if !(self.ln_eps > 0.0) {
            return fail(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Multiplier on `lr` for the text provider's parameters.
    pub text_lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub tau_init: f64,
    pub seed: u64,
    pub balance_keys: Vec<String>,
    /// Adds the dance-to-text direction to the loss. Off by default.
    pub symmetric_loss: bool,
    /// Standardize music features with training-split statistics.
    pub standardize_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 300,
            lr: 1e-3,
            text_lr_scale: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            tau_init: 0.07,
            seed: 0,
            balance_keys: vec!["genre".into(), "performer".into()],
            symmetric_loss: false,
            standardize_features: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0) || !(self.text_lr_scale >= 0.0) {
            return fail("learning rates must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.tau_init > 0.0) {
            return fail(format!("tau_init must be positive, got {}", self.tau_init));
        }
        for k in &self.balance_keys {
            if k != "genre" && k != "performer" {
                return fail(format!("unknown balance key {k:?} (genre|performer)"));
            }
        }
        Ok(())
    }
}
