//! Dense `f64` tensors with tape-based reverse-mode differentiation.

pub mod error;
pub mod gradcheck;
pub mod io;
pub mod param;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{GradCheck, GradCheckReport};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{conv_down_len, gelu, Tape, Var};
pub use tensor::Tensor;

/// Normalizes a vector to unit Euclidean norm outside any tape.
pub fn l2_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(TensorError::Degenerate { op: "l2_normalize", reason: format!("norm {n}") });
    }
    Ok(x.iter().map(|v| v / n).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
