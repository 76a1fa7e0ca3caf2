//! Checkpoint files: `TDCK`, a u32 version, a u64 header length, a JSON
//! header, then one TDT1 blob per tensor listed in the header.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tdr_audio::FeatureStats;
use tdr_tensor::io::{read_tensor, write_tensor, DType};
use tdr_tensor::Tensor;

use crate::config::{FusionMode, ModelConfig, TrainConfig};
use crate::error::{CoreError, Result};
use crate::model::Model;
use crate::train::{Adam, TrainState};

pub const MAGIC: &[u8; 4] = b"TDCK";
pub const VERSION: u32 = 1;
/// Column order of the blender input for the full fusion mode.
pub const CONCAT_ORDER: &str = "add,mul";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |reason: String| CoreError::Checkpoint { field: "rng".into(), reason };
        let bytes = hex::decode(&self.seed).map_err(|e| bad(e.to_string()))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad("seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub fusion: FusionMode,
    pub concat_order: String,
    pub vocab_hash: String,
    pub stats_hash: Option<String>,
    pub epoch: usize,
    pub step: u64,
    pub adam_t: u64,
    pub rng: RngState,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: BTreeMap<String, Tensor>,
}

pub fn stats_hash(stats: &FeatureStats) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(stats).expect("stats serialize")))
}

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";
const LOSSES: &str = "loss_history";

fn ck_err(field: &str, reason: impl Into<String>) -> CoreError {
    CoreError::Checkpoint { field: field.to_string(), reason: reason.into() }
}

pub fn to_bytes(state: &TrainState, vocab_hash: &str, stats_hash: Option<&str>) -> Result<Vec<u8>> {
    let store = &state.model.store;
    let mut named: Vec<(String, &Tensor)> = Vec::new();
    for (k, (_, p)) in store.iter().enumerate() {
        named.push((format!("{PARAM}{}", p.name), &p.value));
        named.push((format!("{ADAM_M}{}", p.name), &state.adam.m[k]));
        named.push((format!("{ADAM_V}{}", p.name), &state.adam.v[k]));
    }
    let losses = Tensor::row_vector(state.loss_history.clone());
    if !state.loss_history.is_empty() {
        named.push((LOSSES.to_string(), &losses));
    }
    let header = CheckpointHeader {
        model_config: state.model.config.clone(),
        train_config: state.config.clone(),
        fusion: state.model.config.fusion,
        concat_order: CONCAT_ORDER.into(),
        vocab_hash: vocab_hash.into(),
        stats_hash: stats_hash.map(str::to_string),
        epoch: state.epoch,
        step: state.step,
        adam_t: state.adam.t,
        rng: RngState::capture(&state.rng),
        tensors: named.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in named {
        write_tensor(&mut out, t, DType::F64)?;
    }
    Ok(out)
}

pub fn save_checkpoint(state: &TrainState, vocab_hash: &str, stats_hash: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(state, vocab_hash, stats_hash)?)?;
    Ok(())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| ck_err("magic", "file too short"))?;
    if &magic != MAGIC {
        return Err(ck_err("magic", format!("expected {MAGIC:?}, found {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| ck_err("version", "truncated"))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(ck_err("version", format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| ck_err("header", "truncated length"))?;
    let len = u64::from_le_bytes(len) as usize;
    let start = r.position() as usize;
    let json = bytes.get(start..start + len).ok_or_else(|| ck_err("header", "truncated"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| ck_err("header", e.to_string()))?;
    r.set_position((start + len) as u64);
    let mut tensors = BTreeMap::new();
    for entry in &header.tensors {
        let t = read_tensor(&mut r).map_err(|e| ck_err(&entry.name, e.to_string()))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(ck_err(&entry.name, format!("blob shape {:?} disagrees with header {:?}", t.shape(), entry.shape)));
        }
        tensors.insert(entry.name.clone(), t);
    }
    if (r.position() as usize) != bytes.len() {
        return Err(ck_err("tensors", "trailing bytes after the last blob"));
    }
    Ok(Checkpoint { header, tensors })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}

impl Checkpoint {
    /// Parameter tensors keyed by parameter name.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().filter_map(|(k, v)| k.strip_prefix(PARAM).map(|n| (n, v)))
    }

    /// Copies the stored parameters into `model`, which must have exactly
    /// the same parameter names and shapes.
    pub fn load_into(&self, model: &mut Model) -> Result<()> {
        model.load_values(self.params())
    }

    /// Checks the recorded vocabulary and feature-statistics hashes.
    pub fn verify_hashes(&self, vocab_hash: Option<&str>, stats_hash: Option<&str>) -> Result<()> {
        if let Some(v) = vocab_hash {
            if v != self.header.vocab_hash {
                return Err(ck_err("vocab_hash", format!("checkpoint has {}, data has {v}", self.header.vocab_hash)));
            }
        }
        if let Some(s) = stats_hash {
            if Some(s) != self.header.stats_hash.as_deref() {
                return Err(ck_err("stats_hash", format!("checkpoint has {:?}, data has {s}", self.header.stats_hash)));
            }
        }
        Ok(())
    }

    /// Model with the stored configuration and parameters.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.header.model_config.clone(), 0)?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    /// Full training state, optimizer moments and rng included.
    pub fn into_state(self) -> Result<TrainState> {
        let model = self.model()?;
        let mut m = Vec::with_capacity(model.store.len());
        let mut v = Vec::with_capacity(model.store.len());
        for (_, p) in model.store.iter() {
            for (prefix, out) in [(ADAM_M, &mut m), (ADAM_V, &mut v)] {
                let key = format!("{prefix}{}", p.name);
                let t = self.tensors.get(&key).ok_or_else(|| ck_err(&key, "missing"))?;
                if t.shape() != p.value.shape() {
                    return Err(CoreError::Shape { name: key, expected: p.value.shape().to_vec(), found: t.shape().to_vec() });
                }
                out.push(t.clone());
            }
        }
        let loss_history = self.tensors.get(LOSSES).map(|t| t.data().to_vec()).unwrap_or_default();
        Ok(TrainState {
            model,
            config: self.header.train_config.clone(),
            adam: Adam { m, v, t: self.header.adam_t },
            epoch: self.header.epoch,
            step: self.header.step,
            rng: self.header.rng.restore()?,
            loss_history,
        })
    }
}
