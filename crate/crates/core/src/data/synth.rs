//! Synthetic corpus: genre-specific motion and music with templated
//! captions. Everything derives from the config seed, clip by clip, so
//! clips can be regenerated lazily without holding the corpus in memory.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tdr_audio::AudioClip;
use tdr_tensor::Tensor;

use super::manifest::{ClipManifestEntry, Manifest, Tags};
use super::motion::{MotionClip, CLIP_FRAMES, FPS, JOINTS, POSE_DIM};
use crate::error::{CoreError, Result};

const GENRES: [&str; 16] = [
    "hiphop", "jazz", "popping", "locking", "krump", "ballet", "house", "waacking", "breaking", "latin", "tap",
    "tango", "voguing", "dancehall", "salsa", "kpop",
];
pub const BODY_GROUPS: [&str; 3] = ["arms", "legs", "torso"];
pub const INTENSITIES: [&str; 3] = ["gentle", "moderate", "explosive"];
pub const TEMPO_BANDS: [&str; 3] = ["slow", "medium", "fast"];

const INTENSITY_AMP: [f64; 3] = [0.3, 0.6, 1.0];
const REST_AMP: f64 = 0.1;
const ARPEGGIO: [f64; 4] = [0.0, 4.0, 7.0, 12.0];

/// SMPL-style body joints 0..22 by group; hand joints 22..52 move with the arms.
const LEGS: [usize; 8] = [1, 2, 4, 5, 7, 8, 10, 11];
const TORSO: [usize; 6] = [0, 3, 6, 9, 12, 15];

fn body_group(joint: usize) -> usize {
    if LEGS.contains(&joint) {
        1
    } else if TORSO.contains(&joint) {
        2
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_genres: usize,
    pub clips_per_genre: usize,
    pub performers: usize,
    /// Probability that a caption describes the clip's true tags.
    pub rho: f64,
    pub seed: u64,
    pub sample_rate: u32,
    /// Standard deviation of per-frame pose noise, radians.
    pub motion_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_genres: 8,
            clips_per_genre: 12,
            performers: 6,
            rho: 1.0,
            seed: 0,
            sample_rate: tdr_audio::DEFAULT_SAMPLE_RATE,
            motion_noise: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_genres == 0 || self.n_genres > GENRES.len() {
            return Err(CoreError::Config(format!("n_genres must be in 1..={}, got {}", GENRES.len(), self.n_genres)));
        }
        if self.clips_per_genre == 0 || self.performers == 0 {
            return Err(CoreError::Config("clips_per_genre and performers must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(CoreError::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if self.sample_rate < 8000 || !(self.motion_noise >= 0.0) {
            return Err(CoreError::Config("sample_rate must be at least 8000 and motion_noise non-negative".into()));
        }
        Ok(())
    }

    /// Genre tempos spread evenly over 80..=170 BPM.
    pub fn genre_tempo(&self, genre: usize) -> f64 {
        if self.n_genres == 1 {
            120.0
        } else {
            (80.0 + genre as f64 * 90.0 / (self.n_genres - 1) as f64).round()
        }
    }
}

pub fn tempo_band(bpm: f64) -> &'static str {
    if bpm < 100.0 {
        TEMPO_BANDS[0]
    } else if bpm < 140.0 {
        TEMPO_BANDS[1]
    } else {
        TEMPO_BANDS[2]
    }
}

pub fn caption_for(tags: &Tags) -> String {
    format!(
        "a {} {} phrase emphasizing {} at a {} tempo",
        tags.intensity, tags.genre, tags.body_emphasis, tags.tempo_band
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub index: usize,
    pub clip_id: String,
    pub genre_index: usize,
    pub tempo_bpm: f64,
    /// Emphasized body group (index into [`BODY_GROUPS`]).
    pub emphasis: usize,
    /// Index into [`INTENSITIES`].
    pub intensity: usize,
    pub performer: usize,
    /// Time of the first beat, seconds.
    pub beat_offset: f64,
    pub tags: Tags,
    pub caption: String,
}

impl SynthClip {
    pub fn performer_id(&self) -> String {
        format!("p{:02}", self.performer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub clips: Vec<SynthClip>,
    /// Per performer, joint and axis: a fixed phase offset.
    performer_phase: Vec<Vec<f64>>,
}

/// Independent per-purpose random streams for one clip.
fn clip_rng(seed: u64, index: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index as u64) << 2 | purpose);
    rng
}

const STREAM_META: u64 = 0;
const STREAM_MOTION: u64 = 1;
const STREAM_AUDIO: u64 = 2;

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut perf_rng = ChaCha8Rng::seed_from_u64(config.seed);
    perf_rng.set_stream(u64::MAX);
    let performer_phase = (0..config.performers)
        .map(|_| (0..JOINTS * 3).map(|_| perf_rng.random_range(-0.5..0.5)).collect())
        .collect();

    let mut clips = Vec::with_capacity(config.n_genres * config.clips_per_genre);
    for g in 0..config.n_genres {
        let tempo = config.genre_tempo(g);
        for k in 0..config.clips_per_genre {
            let index = clips.len();
            let mut rng = clip_rng(config.seed, index, STREAM_META);
            let combo = (k + g) % 9;
            let (emphasis, intensity) = (combo % 3, combo / 3);
            let tags = Tags {
                genre: GENRES[g].to_string(),
                tempo_band: tempo_band(tempo).to_string(),
                body_emphasis: BODY_GROUPS[emphasis].to_string(),
                intensity: INTENSITIES[intensity].to_string(),
            };
            let beat_offset = rng.random_range(0.0..60.0 / tempo);
            let faithful = rng.random::<f64>() < config.rho;
            let caption_tags = if faithful {
                tags.clone()
            } else {
                Tags {
                    genre: GENRES[rng.random_range(0..config.n_genres)].to_string(),
                    tempo_band: TEMPO_BANDS[rng.random_range(0..3)].to_string(),
                    body_emphasis: BODY_GROUPS[rng.random_range(0..3)].to_string(),
                    intensity: INTENSITIES[rng.random_range(0..3)].to_string(),
                }
            };
            clips.push(SynthClip {
                index,
                clip_id: format!("g{g:02}_c{k:03}"),
                genre_index: g,
                tempo_bpm: tempo,
                emphasis,
                intensity,
                performer: k % config.performers,
                beat_offset,
                caption: caption_for(&caption_tags),
                tags,
            });
        }
    }
    Ok(SynthCorpus { config: config.clone(), clips, performer_phase })
}

impl SynthCorpus {
    pub fn genres(&self) -> Vec<&'static str> {
        GENRES[..self.config.n_genres].to_vec()
    }

    /// 360 frames of axis-angle poses plus root translation. Each joint
    /// oscillates at the beat frequency; the emphasized group swings with the
    /// clip's intensity amplitude, the rest with a small base amplitude. The
    /// genre picks a dominant rotation axis and a second-harmonic weight.
    pub fn motion(&self, clip: &SynthClip) -> MotionClip {
        let mut rng = clip_rng(self.config.seed, clip.index, STREAM_MOTION);
        let noise = Normal::new(0.0, self.config.motion_noise).expect("validated std");
        let jitter: Vec<f64> = (0..JOINTS * 3).map(|_| rng.random_range(-0.1..0.1)).collect();
        let g = clip.genre_index;
        let f_beat = clip.tempo_bpm / 60.0;
        let harmonic = 0.15 * (g % 4) as f64;
        let amp = INTENSITY_AMP[clip.intensity];
        let phase = &self.performer_phase[clip.performer];

        let mut data = Vec::with_capacity(CLIP_FRAMES * POSE_DIM);
        for t in 0..CLIP_FRAMES {
            let time = t as f64 / FPS as f64 - clip.beat_offset;
            let w = 2.0 * PI * f_beat * time;
            for j in 0..JOINTS {
                let a_j = if body_group(j) == clip.emphasis { amp } else { REST_AMP };
                for axis in 0..3 {
                    let axis_w = if axis == g % 3 { 1.0 } else { 0.35 };
                    let ph = phase[3 * j + axis] + jitter[3 * j + axis];
                    let v = a_j * axis_w * ((w + ph).sin() + harmonic * (2.0 * w + 2.0 * ph).sin());
                    data.push(v + noise.sample(&mut rng));
                }
            }
            let bounce = 0.04 * (1.0 + clip.intensity as f64) * (0.5 * w).sin().abs();
            data.push(0.1 * (2.0 * PI * time / 12.0).sin());
            data.push(bounce);
            data.push(0.02 * (g as f64 - self.config.n_genres as f64 / 2.0) * time / 12.0);
        }
        MotionClip::new(Tensor::new(vec![CLIP_FRAMES, POSE_DIM], data).expect("shape matches"), FPS)
            .expect("non-empty motion")
    }

    /// Twelve seconds of audio: a click on every beat (louder for higher
    /// intensity) plus a decaying arpeggio on the genre's root pitch.
    pub fn audio(&self, clip: &SynthClip) -> AudioClip {
        let sr = self.config.sample_rate as f64;
        let n = (tdr_audio::CLIP_SECONDS * sr).round() as usize;
        let mut rng = clip_rng(self.config.seed, clip.index, STREAM_AUDIO);
        let mut s: Vec<f64> = (0..n).map(|_| 0.01 * rng.random_range(-1.0..1.0)).collect();
        let period = 60.0 / clip.tempo_bpm;
        let root = 220.0 * 2f64.powf(((clip.genre_index * 5) % 12) as f64 / 12.0);
        let click_amp = 0.35 + 0.15 * clip.intensity as f64;
        let mut beat = 0;
        loop {
            let t0 = clip.beat_offset + beat as f64 * period;
            if t0 >= tdr_audio::CLIP_SECONDS {
                break;
            }
            let start = (t0 * sr).round() as usize;
            let freq = root * 2f64.powf(ARPEGGIO[beat % 4] / 12.0);
            let len = ((period * sr) as usize).min(n - start.min(n));
            for i in 0..len {
                let tt = i as f64 / sr;
                let click = click_amp * (-tt / 0.004).exp() * (2.0 * PI * 2000.0 * tt).sin();
                let tone = 0.2 * (-tt / 0.12).exp() * (2.0 * PI * freq * tt).sin();
                s[start + i] += click + tone;
            }
            beat += 1;
        }
        AudioClip::new(s, self.config.sample_rate)
    }

    /// Manifest with paths `motion/<id>.tdt` and `audio/<id>.wav` and no
    /// split assigned.
    pub fn manifest(&self) -> Manifest {
        let entries = self
            .clips
            .iter()
            .map(|c| ClipManifestEntry {
                clip_id: c.clip_id.clone(),
                motion_path: format!("motion/{}.tdt", c.clip_id),
                audio_path: format!("audio/{}.wav", c.clip_id),
                caption: c.caption.clone(),
                tags: c.tags.clone(),
                performer: c.performer_id(),
                split: None,
            })
            .collect();
        Manifest { entries }
    }
}
