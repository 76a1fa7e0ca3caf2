//! Acoustic features for music clips: MFCC deltas, chroma and onset
//! descriptors, 35 values per STFT frame.

pub mod chroma;
pub mod clip;
pub mod error;
pub mod features;
pub mod mfcc;
pub mod onset;
pub mod stft;

pub use clip::{AudioClip, CLIP_SECONDS, DEFAULT_SAMPLE_RATE};
pub use error::{AudioError, Result};
pub use features::{extract_music_features, features_for, FeatureStats, MusicFeatures, FEATURE_DIM};
pub use onset::OnsetTracks;
pub use stft::{stft, Spectrogram, HOP, WINDOW};
