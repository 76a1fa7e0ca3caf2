//! The full retrieval model: text encoder, music and motion encoders,
//! blender and the learnable temperature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdr_tensor::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::blender::{align, pool, Blender};
use crate::config::{ModelConfig, TextProviderKind};
use crate::encoder::{DropoutRng, TemporalEncoder, TextEncoder};
use crate::error::{CoreError, Result};
use crate::text::{FileEmbeddings, TextQuery};

/// Parameter groups, used for per-group learning rates and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    TextProvider,
    TextAdapter,
    Music,
    Motion,
    Blender,
    Temperature,
}

impl ParamGroup {
    pub fn of(name: &str) -> Self {
        let prefix = name.split('.').next().unwrap_or(name);
        match prefix {
            "text" => Self::TextProvider,
            "adapter" => Self::TextAdapter,
            "music" => Self::Music,
            "motion" => Self::Motion,
            "blender" => Self::Blender,
            _ => Self::Temperature,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TextProvider => "text-provider",
            Self::TextAdapter => "text-adapter",
            Self::Music => "music-encoder",
            Self::Motion => "motion-encoder",
            Self::Blender => "blender",
            Self::Temperature => "temperature",
        }
    }
}

pub const LOG_TAU: &str = "log_tau";

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    text: TextEncoder,
    music: TemporalEncoder,
    motion: TemporalEncoder,
    blender: Blender,
    log_tau: ParamId,
    file_text: Option<FileEmbeddings>,
}

impl Model {
    /// Fresh parameters drawn from `seed`; τ starts at 0.07.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let text = TextEncoder::new(&mut store, &config, &mut rng);
        let music = TemporalEncoder::new(&mut store, "music", config.music_dim, &config, &mut rng);
        let motion = TemporalEncoder::new(&mut store, "motion", config.motion_dim, &config, &mut rng);
        let blender = Blender::new(&mut store, config.d, config.fusion, &mut rng);
        let log_tau = store.add(LOG_TAU, Tensor::scalar(0.07f64.ln()));
        Ok(Self { config, store, text, music, motion, blender, log_tau, file_text: None })
    }

    /// Attaches precomputed sentence embeddings for the file-backed provider.
    pub fn with_file_embeddings(mut self, fe: FileEmbeddings) -> Result<Self> {
        if self.config.text_provider != TextProviderKind::File {
            return Err(CoreError::Config("file embeddings given to a model with the fallback text provider".into()));
        }
        if fe.dim() != self.config.d_c {
            return Err(CoreError::Shape { name: "text embeddings".into(), expected: vec![self.config.d_c], found: vec![fe.dim()] });
        }
        self.file_text = Some(fe);
        Ok(self)
    }

    pub fn log_tau_id(&self) -> ParamId {
        self.log_tau
    }

    pub fn tau(&self) -> f64 {
        self.store.value(self.log_tau).data()[0].exp()
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(CoreError::Config(format!("temperature must be positive and finite, got {tau}")));
        }
        self.store.get_mut(self.log_tau).value = Tensor::scalar(tau.ln());
        Ok(())
    }

    pub fn blender(&self) -> &Blender {
        &self.blender
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn music_encoder(&self) -> &TemporalEncoder {
        &self.music
    }

    pub fn motion_encoder(&self) -> &TemporalEncoder {
        &self.motion
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        ParamGroup::of(&self.store.get(id).name)
    }

    /// `[1 × d]` unit-norm text embedding.
    pub fn text_var(&self, tape: &mut Tape, q: &TextQuery, rng: DropoutRng) -> Result<Var> {
        self.text.forward(tape, &self.store, q, self.file_text.as_ref(), rng)
    }

    pub fn music_var(&self, tape: &mut Tape, features: &Tensor, rng: DropoutRng) -> Result<Var> {
        self.music.forward(tape, &self.store, features, rng)
    }

    pub fn motion_var(&self, tape: &mut Tape, frames: &Tensor, rng: DropoutRng) -> Result<Var> {
        self.motion.forward(tape, &self.store, frames, rng)
    }

    /// `[1 × d]` unit-norm dance embedding from music features and poses.
    pub fn dance_var(&self, tape: &mut Tape, music: &Tensor, motion: &Tensor, mut rng: DropoutRng) -> Result<Var> {
        let ha = self.music_var(tape, music, rng.as_deref_mut())?;
        let hm = self.motion_var(tape, motion, rng)?;
        let (ha, hm) = align(tape, ha, hm, self.config.align)?;
        let b = self.blender.blend(tape, &self.store, ha, hm)?;
        pool(tape, b)
    }

    /// Evaluation-mode text embedding.
    pub fn embed_text(&self, q: &TextQuery) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let z = self.text_var(&mut tape, q, None)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Evaluation-mode dance embedding.
    pub fn embed_dance(&self, music: &Tensor, motion: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let z = self.dance_var(&mut tape, music, motion, None)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Overwrites parameter values by name; every stored name must exist
    /// with the same shape.
    pub fn load_values<'a>(&mut self, values: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let mut seen = 0;
        for (name, value) in values {
            let id = self.store.find(name).ok_or_else(|| CoreError::Checkpoint {
                field: name.to_string(),
                reason: "parameter not present in this model".into(),
            })?;
            let p = self.store.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(CoreError::Shape { name: name.to_string(), expected: p.value.shape().to_vec(), found: value.shape().to_vec() });
            }
            p.value = value.clone();
            seen += 1;
        }
        if seen != self.store.len() {
            return Err(CoreError::Checkpoint {
                field: "parameters".into(),
                reason: format!("expected {} parameters, found {seen}", self.store.len()),
            });
        }
        Ok(())
    }
}
