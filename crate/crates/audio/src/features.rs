use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tdr_tensor::Tensor;

use crate::chroma::{chroma, N_CHROMA};
use crate::clip::{AudioClip, CLIP_SECONDS};
use crate::error::{AudioError, Result};
use crate::mfcc::{mfcc_delta, N_MFCC};
use crate::onset::onset_tracks;
use crate::stft::{stft, HOP, WINDOW};

pub const FEATURE_DIM: usize = 35;
pub const MFCC_DELTA_COLS: std::ops::Range<usize> = 0..N_MFCC;
pub const CHROMA_COLS: std::ops::Range<usize> = N_MFCC..N_MFCC + N_CHROMA;
pub const ENVELOPE_COL: usize = 32;
pub const BEAT_COL: usize = 33;
pub const PEAK_COL: usize = 34;

/// Per-frame acoustic features: `[mfcc delta ×20 | chroma ×12 | onset
/// envelope | beat indicator | peak indicator]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicFeatures {
    pub frames: Tensor,
    /// Seconds per frame.
    pub hop: f64,
    pub tempo_bpm: Option<f64>,
    pub standardized: bool,
}

impl MusicFeatures {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.frames.rows()).map(|r| self.frames.at(r, c)).collect()
    }

    pub fn standardize(&mut self, stats: &FeatureStats) {
        let c = self.frames.cols();
        for row in self.frames.data_mut().chunks_mut(c) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - stats.mean[j]) / stats.std[j];
            }
        }
        self.standardized = true;
    }
}

/// Feature extraction without the 12-second duration check.
pub fn features_for(clip: &AudioClip) -> Result<MusicFeatures> {
    let spec = stft(clip, WINDOW, HOP)?;
    let deltas = mfcc_delta(&spec);
    let chroma = chroma(&spec);
    let onset = onset_tracks(&spec);
    let mut data = Vec::with_capacity(spec.frames * FEATURE_DIM);
    for t in 0..spec.frames {
        data.extend_from_slice(&deltas[t]);
        data.extend_from_slice(&chroma[t]);
        data.extend([onset.envelope[t], onset.beats[t], onset.peaks[t]]);
    }
    Ok(MusicFeatures {
        frames: Tensor::new(vec![spec.frames, FEATURE_DIM], data)?,
        hop: HOP as f64 / clip.sample_rate as f64,
        tempo_bpm: onset.tempo_bpm,
        standardized: false,
    })
}

/// Features of a standard 12-second clip, optionally standardized.
pub fn extract_music_features(clip: &AudioClip, stats: Option<&FeatureStats>) -> Result<MusicFeatures> {
    let expected = (CLIP_SECONDS * clip.sample_rate as f64).round() as usize;
    if clip.len().abs_diff(expected) > 1 {
        return Err(AudioError::WrongDuration { expected: CLIP_SECONDS, got: clip.duration() });
    }
    let mut f = features_for(clip)?;
    if let Some(stats) = stats {
        f.standardize(stats);
    }
    Ok(f)
}

/// Per-column mean and standard deviation over a split's frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub split: String,
    pub n_frames: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Constant columns get a unit deviation so standardization stays finite.
    pub fn compute<'a>(split: &str, features: impl IntoIterator<Item = &'a MusicFeatures>) -> Result<Self> {
        let mut sum = vec![0.0; FEATURE_DIM];
        let mut sq = vec![0.0; FEATURE_DIM];
        let mut n = 0usize;
        for f in features {
            if f.standardized {
                return Err(AudioError::Stats("stats must be computed on raw features".into()));
            }
            for r in 0..f.frames.rows() {
                for (j, v) in f.frames.row(r).iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            n += f.frames.rows();
        }
        if n == 0 {
            return Err(AudioError::Stats(format!("no frames in split {split}")));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n as f64 - m * m).max(0.0).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Ok(Self { split: split.to_string(), n_frames: n, mean, std })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if s.mean.len() != FEATURE_DIM || s.std.len() != FEATURE_DIM {
            return Err(AudioError::Stats(format!("expected {FEATURE_DIM} columns, got {}", s.mean.len())));
        }
        Ok(s)
    }
}
