//! Text-to-dance InfoNCE.

use tdr_tensor::{Tape, Tensor, TensorError, Var};

use crate::error::Result;

/// Largest tolerated deviation of an embedding's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

fn check_unit_rows(name: &'static str, z: &Tensor) -> Result<()> {
    if z.ndim() != 2 || z.rows() == 0 {
        return Err(TensorError::Contract { op: "info_nce", reason: format!("{name} must be a non-empty matrix, got {:?}", z.shape()) }.into());
    }
    for r in 0..z.rows() {
        let n = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((n - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(TensorError::Contract { op: "info_nce", reason: format!("{name} row {r} has norm {n}") }.into());
        }
    }
    Ok(())
}

/// `−(1/B)·Σᵢ log softmax_j(sᵢⱼ/τ)[i]` with `s = Z_t·Z_dᵀ`. Rows of both
/// inputs must be unit-norm.
pub fn info_nce(zt: &Tensor, zd: &Tensor, tau: f64) -> Result<f64> {
    check_unit_rows("Z_t", zt)?;
    check_unit_rows("Z_d", zd)?;
    if zt.shape() != zd.shape() {
        return Err(TensorError::Dimension { op: "info_nce", left: zt.shape().to_vec(), right: zd.shape().to_vec() }.into());
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(TensorError::Contract { op: "info_nce", reason: format!("temperature must be positive, got {tau}") }.into());
    }
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(zt.clone()), tape.constant(zd.clone()));
    let lt = tape.constant(Tensor::scalar(tau.ln()));
    let l = info_nce_var(&mut tape, a, b, lt, false)?;
    Ok(tape.value(l).data()[0])
}

/// Differentiable InfoNCE with the temperature given as `log τ`. The
/// `symmetric` flag averages in the dance-to-text direction.
pub fn info_nce_var(tape: &mut Tape, zt: Var, zd: Var, log_tau: Var, symmetric: bool) -> Result<Var> {
    let neg = tape.scale(log_tau, -1.0);
    let inv_tau = tape.exp(neg);
    let s = tape.matmul_t(zt, zd, false, true)?;
    let logits = tape.mul_scalar(s, inv_tau)?;
    let t2d = tape.cross_entropy_diag(logits)?;
    if !symmetric {
        return Ok(t2d);
    }
    let st = tape.matmul_t(zd, zt, false, true)?;
    let logits_t = tape.mul_scalar(st, inv_tau)?;
    let d2t = tape.cross_entropy_diag(logits_t)?;
    let both = tape.add(t2d, d2t)?;
    Ok(tape.scale(both, 0.5))
}
