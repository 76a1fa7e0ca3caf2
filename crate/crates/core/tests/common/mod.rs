#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdr_audio::MusicFeatures;
use tdr_core::data::{Sample, Split};
use tdr_core::{ModelConfig, Vocabulary};
use tdr_tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn unit_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = random(rng, rows, cols);
    for r in t.data_mut().chunks_mut(cols) {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    t
}

/// d=8 model over short inputs, cheap enough for finite differences.
pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d: 8,
        d_c: 6,
        heads: 2,
        adapter_hidden: 8,
        max_len: 32,
        dropout: 0.0,
        vocab_size,
        ..Default::default()
    }
}

pub const CAPTIONS: [&str; 4] = [
    "a gentle jazz phrase emphasizing arms at a slow tempo",
    "an explosive krump phrase emphasizing legs at a fast tempo",
    "a moderate house phrase emphasizing torso at a medium tempo",
    "a gentle ballet phrase emphasizing arms at a medium tempo",
];

pub fn vocab() -> Vocabulary {
    Vocabulary::build(CAPTIONS)
}

/// Random samples with `frames` music and motion frames.
pub fn random_samples(rng: &mut impl Rng, n: usize, frames: usize, cfg: &ModelConfig) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            clip_id: format!("clip{i:03}"),
            genre: format!("g{}", i % 4),
            performer: format!("p{}", i % 3),
            split: Some(Split::Train),
            caption: CAPTIONS[i % CAPTIONS.len()].to_string(),
            music: MusicFeatures { frames: random(rng, frames, cfg.music_dim), hop: 0.023, tempo_bpm: None, standardized: true },
            motion: random(rng, frames, cfg.motion_dim),
        })
        .collect()
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Lifts a core result into the tensor error type gradcheck closures use.
pub fn lift<T>(r: tdr_core::Result<T>) -> tdr_tensor::Result<T> {
    r.map_err(|e| tdr_tensor::TensorError::Contract { op: "test", reason: e.to_string() })
}
