//! Clips, manifests, splits and the synthetic corpus.

pub mod dataset;
pub mod manifest;
pub mod motion;
pub mod split;
pub mod synth;

pub use dataset::Sample;
pub use manifest::{ClipManifestEntry, Manifest, Split, Tags};
pub use motion::{clips_in_hours, segment, MotionClip, CLIP_FRAMES, FPS, JOINTS, POSE_DIM};
pub use split::{check_constraints, make_splits, ConstraintReport, SplitRatios};
pub use synth::{generate, SynthConfig, SynthCorpus};
