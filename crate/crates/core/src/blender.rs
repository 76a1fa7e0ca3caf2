//! Fusion of the music and motion streams into one dance embedding.

use rand::Rng;
use tdr_tensor::{ParamId, ParamStore, Tape, TensorError, Var};

use crate::config::{AlignMode, FusionMode};
use crate::encoder::xavier;
use crate::error::Result;

/// Brings both streams to `min(T_a, T_m)` frames. The shorter stream (or
/// both, when equal) passes through untouched.
pub fn align(tape: &mut Tape, ha: Var, hm: Var, mode: AlignMode) -> Result<(Var, Var)> {
    let (ta, tm) = (tape.value(ha).rows(), tape.value(hm).rows());
    if ta == 0 || tm == 0 {
        return Err(TensorError::Contract { op: "align", reason: format!("empty stream ({ta} vs {tm} frames)") }.into());
    }
    let t = ta.min(tm);
    let fit = |tape: &mut Tape, h: Var, len: usize| -> Result<Var> {
        Ok(match (len == t, mode) {
            (true, _) => h,
            (false, AlignMode::Interpolate) => tape.resample_rows(h, t)?,
            (false, AlignMode::Truncate) => tape.slice_rows(h, 0, t)?,
        })
    };
    Ok((fit(tape, ha, ta)?, fit(tape, hm, tm)?))
}

/// `B = GELU(concat[H_a + H_m ; H_a ⊙ H_m] · W)` (or one of the two blocks
/// alone for the ablation modes).
#[derive(Debug, Clone, Copy)]
pub struct Blender {
    pub mode: FusionMode,
    pub w: ParamId,
}

impl Blender {
    pub fn input_dim(mode: FusionMode, d: usize) -> usize {
        match mode {
            FusionMode::Full => 2 * d,
            FusionMode::Add | FusionMode::Mul => d,
        }
    }

    pub fn new(store: &mut ParamStore, d: usize, mode: FusionMode, rng: &mut impl Rng) -> Self {
        let d_in = Self::input_dim(mode, d);
        let w = store.add("blender.w", xavier(rng, &[d_in, d], d_in, d));
        Self { mode, w }
    }

    pub fn blend(&self, tape: &mut Tape, store: &ParamStore, ha: Var, hm: Var) -> Result<Var> {
        if tape.value(ha).shape() != tape.value(hm).shape() {
            return Err(TensorError::Contract {
                op: "blend",
                reason: format!("streams not aligned: {:?} vs {:?}", tape.value(ha).shape(), tape.value(hm).shape()),
            }
            .into());
        }
        let x = match self.mode {
            FusionMode::Full => {
                let add = tape.add(ha, hm)?;
                let mul = tape.mul(ha, hm)?;
                tape.concat_cols(&[add, mul])?
            }
            FusionMode::Add => tape.add(ha, hm)?,
            FusionMode::Mul => tape.mul(ha, hm)?,
        };
        let w = tape.param(store, self.w);
        let b = tape.matmul(x, w)?;
        Ok(tape.gelu(b))
    }
}

/// `z_d = l2_normalize(mean_t B_t)`, shape `[1 × d]`.
pub fn pool(tape: &mut Tape, b: Var) -> Result<Var> {
    if tape.value(b).rows() == 0 {
        return Err(TensorError::Contract { op: "pool", reason: "no frames".into() }.into());
    }
    let m = tape.mean_rows(b);
    Ok(tape.l2_normalize_rows(m)?)
}
