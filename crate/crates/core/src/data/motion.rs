//! Pose sequences and their segmentation into fixed-length clips.

use tdr_tensor::Tensor;

use crate::error::{CoreError, Result};

pub const FPS: u32 = 30;
pub const JOINTS: usize = 52;
/// Axis-angle per joint plus root translation.
pub const POSE_DIM: usize = JOINTS * 3 + 3;
/// Twelve seconds at 30 frames per second.
pub const CLIP_FRAMES: usize = 360;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    /// `[T × p]` poses.
    pub frames: Tensor,
    pub fps: u32,
}

impl MotionClip {
    pub fn new(frames: Tensor, fps: u32) -> Result<Self> {
        if frames.ndim() != 2 || frames.rows() == 0 {
            return Err(CoreError::Input(format!("motion must be a non-empty [T × p] matrix, got {:?}", frames.shape())));
        }
        Ok(Self { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Largest axis-angle magnitude over all joints and frames (the root
    /// translation columns are ignored).
    pub fn max_rotation(&self) -> f64 {
        let p = self.frames.cols();
        let joints = p.saturating_sub(3) / 3;
        (0..self.len())
            .flat_map(|t| {
                let row = self.frames.row(t);
                (0..joints).map(move |j| row[3 * j..3 * j + 3].iter().map(|v| v * v).sum::<f64>().sqrt())
            })
            .fold(0.0, f64::max)
    }
}

/// Non-overlapping consecutive 360-frame windows; a trailing remainder
/// shorter than one clip is dropped.
pub fn segment(sequence: &Tensor, fps: u32) -> Result<Vec<MotionClip>> {
    let total = if sequence.ndim() == 2 { sequence.rows() } else { 0 };
    if total < CLIP_FRAMES {
        return Err(CoreError::TooShort { frames: total, clip: CLIP_FRAMES });
    }
    let p = sequence.cols();
    (0..total / CLIP_FRAMES)
        .map(|i| {
            let data = sequence.data()[i * CLIP_FRAMES * p..(i + 1) * CLIP_FRAMES * p].to_vec();
            MotionClip::new(Tensor::new(vec![CLIP_FRAMES, p], data)?, fps)
        })
        .collect()
}

/// Number of whole clips in `hours` of capture at `fps`.
pub fn clips_in_hours(hours: f64, fps: u32) -> usize {
    (hours * 3600.0 * fps as f64).round() as usize / CLIP_FRAMES
}
