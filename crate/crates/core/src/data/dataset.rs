//! In-memory training/evaluation samples: music features, poses, caption.

use std::path::Path;

use tdr_audio::{extract_music_features, AudioClip, FeatureStats, MusicFeatures, FEATURE_DIM};

use super::manifest::{ClipManifestEntry, Manifest, Split};
use super::synth::SynthCorpus;
use crate::error::{CoreError, Result};
use crate::text::{TextQuery, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip_id: String,
    pub genre: String,
    pub performer: String,
    pub split: Option<Split>,
    pub caption: String,
    pub music: MusicFeatures,
    /// `[T × p]` poses.
    pub motion: tdr_tensor::Tensor,
}

impl Sample {
    /// The caption as a query keyed by this clip's id.
    pub fn query(&self, vocab: &Vocabulary) -> Result<TextQuery> {
        Ok(TextQuery::new(&self.caption, vocab)?.with_id(&self.clip_id))
    }
}

fn sample(entry: &ClipManifestEntry, music: MusicFeatures, motion: tdr_tensor::Tensor) -> Sample {
    Sample {
        clip_id: entry.clip_id.clone(),
        genre: entry.tags.genre.clone(),
        performer: entry.performer.clone(),
        split: entry.split,
        caption: entry.caption.clone(),
        music,
        motion,
    }
}

/// Raw (unstandardized) features for a WAV file or a cached TDT1 matrix.
pub fn load_music(path: &Path) -> Result<MusicFeatures> {
    if path.extension().is_some_and(|e| e == "wav") {
        return Ok(extract_music_features(&AudioClip::read_wav(path)?, None)?);
    }
    let frames = tdr_tensor::io::load(path)?;
    if frames.ndim() != 2 || frames.cols() != FEATURE_DIM {
        return Err(CoreError::Shape { name: path.display().to_string(), expected: vec![frames.rows(), FEATURE_DIM], found: frames.shape().to_vec() });
    }
    Ok(MusicFeatures {
        frames,
        hop: tdr_audio::HOP as f64 / tdr_audio::DEFAULT_SAMPLE_RATE as f64,
        tempo_bpm: None,
        standardized: false,
    })
}

/// Loads the manifest entries of `split` (all when `None`) with paths
/// relative to `base`. Every unreadable item is reported together.
pub fn load_samples(manifest: &Manifest, base: &Path, split: Option<Split>) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for e in manifest.entries.iter().filter(|e| split.is_none() || e.split == split) {
        if e.caption.trim().is_empty() {
            missing.push(format!("{}: empty caption", e.clip_id));
        }
        let music = load_music(&ClipManifestEntry::resolve(base, &e.audio_path));
        let motion = tdr_tensor::io::load(ClipManifestEntry::resolve(base, &e.motion_path));
        match (music, motion) {
            (Ok(m), Ok(p)) => out.push(sample(e, m, p)),
            (m, p) => {
                if let Err(err) = m {
                    missing.push(format!("{}: audio {}: {err}", e.clip_id, e.audio_path));
                }
                if let Err(err) = p {
                    missing.push(format!("{}: motion {}: {err}", e.clip_id, e.motion_path));
                }
            }
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(CoreError::Missing(missing))
    }
}

/// Samples generated directly from a synthetic corpus, with splits taken
/// from `manifest` (matched by clip id).
pub fn synth_samples(corpus: &SynthCorpus, manifest: &Manifest) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(corpus.clips.len());
    for clip in &corpus.clips {
        let entry = manifest
            .entries
            .iter()
            .find(|e| e.clip_id == clip.clip_id)
            .ok_or_else(|| CoreError::Lookup(format!("clip {} not in manifest", clip.clip_id)))?;
        let music = extract_music_features(&corpus.audio(clip), None)?;
        out.push(sample(entry, music, corpus.motion(clip).frames));
    }
    Ok(out)
}

/// Column statistics over the training split's raw features.
pub fn fit_feature_stats(samples: &[Sample]) -> Result<FeatureStats> {
    let train: Vec<&MusicFeatures> = samples.iter().filter(|s| s.split == Some(Split::Train)).map(|s| &s.music).collect();
    Ok(FeatureStats::compute("train", train)?)
}

pub fn standardize(samples: &mut [Sample], stats: &FeatureStats) {
    for s in samples.iter_mut().filter(|s| !s.music.standardized) {
        s.music.standardize(stats);
    }
}

pub fn vocabulary(samples: &[Sample]) -> Vocabulary {
    Vocabulary::build(samples.iter().filter(|s| s.split.is_none() || s.split == Some(Split::Train)).map(|s| s.caption.as_str()))
}
