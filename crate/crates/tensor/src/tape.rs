//! Reverse-mode differentiation over a linear record of operations.
//!
//! Every op appends one node holding its forward value. Because nodes can
//! only reference earlier nodes, the record is topologically ordered and a
//! single reverse sweep visits each node once.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow { x: Var, row: Var },
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar { x: Var, s: Var },
    Exp(Var),
    Relu(Var),
    Gelu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    SoftmaxRows(Var),
    AttnProbs { q: Var, k: Var, scale: f64 },
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<f64>, rstd: Vec<f64> },
    Conv1dDown { x: Var, kernel: Var, out_len: usize },
    MeanRows(Var),
    SumAll(Var),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Resample { x: Var, taps: Vec<(usize, usize, f64)> },
    CrossEntropyDiag { logits: Var, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Output length of a kernel-3, stride-2, padding-1 temporal convolution.
pub fn conv_down_len(t: usize) -> usize {
    (t + 2 - 3) / 2 + 1
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Dimension { op, left: self.shape(a).to_vec(), right: self.shape(b).to_vec() }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a stored parameter. Repeated calls with the same id return
    /// the same node, so gradients from every use are summed once.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` transposes when the matching flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = if ta { (av.cols(), av.rows()) } else { (av.rows(), av.cols()) };
        let (k2, n) = if tb { (bv.cols(), bv.rows()) } else { (bv.rows(), bv.cols()) };
        if k != k2 || av.ndim() != 2 || bv.ndim() != 2 {
            return Err(self.dim_err("matmul", a, b));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(ta, tb, 1.0, av, bv, 0.0, &mut out);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("add", a, b));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `[1×n]` (or `[n]`) row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.len() != xv.cols() || xv.ndim() != 2 {
            return Err(self.dim_err("add_row", x, row));
        }
        let mut out = xv.clone();
        let c = xv.cols();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, r) in chunk.iter_mut().zip(rv.data()) {
                *o += r;
            }
        }
        Ok(self.push(out, Op::AddRow { x, row }))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("mul", a, b));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    /// Multiplies every entry of `x` by the single entry of `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(self.dim_err("mul_scalar", x, s));
        }
        let k = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * k);
        Ok(self.push(out, Op::MulScalar { x, s }))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    /// Inverted dropout. With `rng == None` (evaluation) or a zero rate this
    /// is the identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
        let Some(rng) = rng else { return x };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(o, m)| *o *= m);
        self.push(out, Op::Dropout { x, mask })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let c = out.cols();
        out.data_mut().chunks_mut(c).for_each(softmax_in_place);
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Attention weights `softmax(q·kᵀ·scale)` as one node; only the
    /// probabilities are retained for the backward pass.
    pub fn attn_probs(&mut self, q: Var, k: Var, scale: f64) -> Result<Var> {
        let (qv, kv) = (self.value(q), self.value(k));
        if qv.cols() != kv.cols() {
            return Err(self.dim_err("attention", q, k));
        }
        let mut out = Tensor::zeros(&[qv.rows(), kv.rows()]);
        gemm(false, true, scale, qv, kv, 0.0, &mut out);
        let c = out.cols();
        out.data_mut().chunks_mut(c).for_each(softmax_in_place);
        Ok(self.push(out, Op::AttnProbs { q, k, scale }))
    }

    /// Per-row standardization over the last axis followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(self.dim_err("layer_norm", x, gain));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.rows();
        let mut out = Tensor::zeros(&[rows, d]);
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        for (r, o) in out.data_mut().chunks_mut(d).enumerate() {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                o[j] = (row[j] - mu) * rs * g[j] + b[j];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, mean, rstd }))
    }

    /// Temporal convolution with kernel 3, stride 2 and one frame of zero
    /// padding on each side. `kernel` has shape `[3, d_in, d_out]`.
    pub fn conv1d_down(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(kernel));
        let d = xv.cols();
        if xv.ndim() != 2 || kv.ndim() != 3 || kv.shape()[0] != 3 || kv.shape()[1] != d {
            return Err(self.dim_err("conv1d_down", x, kernel));
        }
        let out_len = conv_down_len(xv.rows());
        let col = im2col(xv, out_len);
        let mut out = Tensor::zeros(&[out_len, kv.cols()]);
        gemm(false, false, 1.0, &col, kv, 0.0, &mut out);
        Ok(self.push(out, Op::Conv1dDown { x, kernel, out_len }))
    }

    /// Mean over the row (time) axis: `[T×d] → [1×d]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; c];
        for row in xv.data().chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push(Tensor::row_vector(out), Op::MeanRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Scales every row to unit Euclidean norm. A zero row is an error.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let norms: Vec<f64> = xv.data().chunks(c).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        if let Some(r) = norms.iter().position(|&n| !(n > 0.0) || !n.is_finite()) {
            return Err(TensorError::Degenerate {
                op: "l2_normalize",
                reason: format!("row {r} has norm {}", norms[r]),
            });
        }
        let mut out = xv.clone();
        for (row, n) in out.data_mut().chunks_mut(c).zip(&norms) {
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(self.push(out, Op::L2NormalizeRows { x, norms }))
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if ids.is_empty() || ids.iter().any(|&i| i >= tv.rows()) {
            return Err(TensorError::Contract {
                op: "gather",
                reason: format!("ids {ids:?} out of range for {} rows", tv.rows()),
            });
        }
        let c = tv.cols();
        let data: Vec<f64> = ids.iter().flat_map(|&i| tv.row(i).iter().copied()).collect();
        let out = Tensor::new(vec![ids.len(), c], data)?;
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if len == 0 || start + len > xv.rows() {
            return Err(TensorError::Contract {
                op: "slice_rows",
                reason: format!("rows {start}..{} of {}", start + len, xv.rows()),
            });
        }
        let c = xv.cols();
        let out = Tensor::new(vec![len, c], xv.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if len == 0 || start + len > xv.cols() {
            return Err(TensorError::Contract {
                op: "slice_cols",
                reason: format!("cols {start}..{} of {}", start + len, xv.cols()),
            });
        }
        let data: Vec<f64> = xv.data().chunks(xv.cols()).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let out = Tensor::new(vec![xv.rows(), len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        if let Some(&bad) = parts.iter().find(|&&p| self.value(p).cols() != c) {
            return Err(self.dim_err("concat_rows", parts[0], bad));
        }
        let data: Vec<f64> = parts.iter().flat_map(|&p| self.value(p).data().iter().copied()).collect();
        let rows = data.len() / c;
        let out = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        if let Some(&bad) = parts.iter().find(|&&p| self.value(p).rows() != r) {
            return Err(self.dim_err("concat_cols", parts[0], bad));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Linear interpolation of the rows of `x` onto `len` uniformly spaced
    /// positions spanning the first to the last row.
    pub fn resample_rows(&mut self, x: Var, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.rows();
        if len == 0 {
            return Err(TensorError::Contract { op: "resample", reason: "target length 0".into() });
        }
        let c = xv.cols();
        let taps = resample_taps(n, len);
        let mut data = Vec::with_capacity(len * c);
        for &(lo, hi, w) in &taps {
            let (a, b) = (xv.row(lo), xv.row(hi));
            data.extend(a.iter().zip(b).map(|(&p, &q)| p + w * (q - p)));
        }
        let out = Tensor::new(vec![len, c], data)?;
        Ok(self.push(out, Op::Resample { x, taps }))
    }

    /// Mean over rows of `logsumexp(row) − row[i]` for a square logit
    /// matrix: softmax cross-entropy where row `i`'s target is column `i`.
    pub fn cross_entropy_diag(&mut self, logits: Var) -> Result<Var> {
        let lv = self.value(logits);
        let b = lv.rows();
        if lv.ndim() != 2 || lv.cols() != b {
            return Err(TensorError::Contract {
                op: "cross_entropy_diag",
                reason: format!("logits must be square, got {:?}", lv.shape()),
            });
        }
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_mut(b).enumerate() {
            let target = row[i];
            let lse = log_sum_exp(row);
            loss += lse - target;
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        Ok(self.push(Tensor::scalar(loss / b as f64), Op::CrossEntropyDiag { logits, probs }))
    }

    /// Runs the reverse sweep from the scalar `loss` and adds each
    /// parameter's gradient into `store` (accumulating with `+=`).
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract {
                op: "backward",
                reason: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    if p.trainable {
                        p.grad.add_assign(&g);
                    }
                }
                _ => self.propagate(node, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Constant | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(*a), val(*b));
                let mut da = Tensor::zeros(av.shape());
                if *ta {
                    gemm(*tb, true, 1.0, bv, g, 0.0, &mut da);
                } else {
                    gemm(false, !*tb, 1.0, g, bv, 0.0, &mut da);
                }
                let mut db = Tensor::zeros(bv.shape());
                if *tb {
                    gemm(true, *ta, 1.0, g, av, 0.0, &mut db);
                } else {
                    gemm(!*ta, false, 1.0, av, g, 0.0, &mut db);
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow { x, row } => {
                let c = g.cols();
                let mut dr = vec![0.0; c];
                for chunk in g.data().chunks(c) {
                    dr.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                }
                let shape = val(*row).shape().to_vec();
                accumulate(grads, *x, g.clone());
                accumulate(grads, *row, Tensor::new(shape, dr).expect("row shape"));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), |gv, bv| gv * bv));
                accumulate(grads, *b, g.zip_map(val(*a), |gv, av| gv * av));
            }
            Op::Scale(x, f) => accumulate(grads, *x, g.map(|v| v * f)),
            Op::MulScalar { x, s } => {
                let k = val(*s).data()[0];
                let ds: f64 = g.data().iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                accumulate(grads, *x, g.map(|v| v * k));
                accumulate(grads, *s, Tensor::new(val(*s).shape().to_vec(), vec![ds]).expect("scalar"));
            }
            Op::Exp(x) => accumulate(grads, *x, g.zip_map(&node.value, |gv, y| gv * y)),
            Op::Relu(x) => accumulate(grads, *x, g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
            Op::Gelu(x) => accumulate(grads, *x, g.zip_map(val(*x), |gv, xv| gv * gelu_grad(xv))),
            Op::Dropout { x, mask } => {
                let mut d = g.clone();
                d.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                accumulate(grads, *x, d);
            }
            Op::SoftmaxRows(x) => accumulate(grads, *x, softmax_backward(&node.value, g, 1.0)),
            Op::AttnProbs { q, k, scale } => {
                let ds = softmax_backward(&node.value, g, *scale);
                let (qv, kv) = (val(*q), val(*k));
                let mut dq = Tensor::zeros(qv.shape());
                gemm(false, false, 1.0, &ds, kv, 0.0, &mut dq);
                let mut dk = Tensor::zeros(kv.shape());
                gemm(true, false, 1.0, &ds, qv, 0.0, &mut dk);
                accumulate(grads, *q, dq);
                accumulate(grads, *k, dk);
            }
            Op::LayerNorm { x, gain, bias, mean, rstd } => {
                let xv = val(*x);
                let gn = val(*gain).data();
                let d = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for (r, dxr) in dx.data_mut().chunks_mut(d).enumerate() {
                    let (row, gr) = (xv.row(r), g.row(r));
                    for j in 0..d {
                        xhat[j] = (row[j] - mean[r]) * rstd[r];
                        dxhat[j] = gr[j] * gn[j];
                        dg[j] += gr[j] * xhat[j];
                        db[j] += gr[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dxr[j] = rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                let gshape = val(*gain).shape().to_vec();
                let bshape = val(*bias).shape().to_vec();
                accumulate(grads, *x, dx);
                accumulate(grads, *gain, Tensor::new(gshape, dg).expect("gain shape"));
                accumulate(grads, *bias, Tensor::new(bshape, db).expect("bias shape"));
            }
            Op::Conv1dDown { x, kernel, out_len } => {
                let (xv, kv) = (val(*x), val(*kernel));
                let col = im2col(xv, *out_len);
                let mut dk = Tensor::zeros(kv.shape());
                gemm(true, false, 1.0, &col, g, 0.0, &mut dk);
                let mut dcol = Tensor::zeros(col.shape());
                gemm(false, true, 1.0, g, kv, 0.0, &mut dcol);
                let mut dx = Tensor::zeros(xv.shape());
                col2im_add(&dcol, &mut dx);
                accumulate(grads, *x, dx);
                accumulate(grads, *kernel, dk);
            }
            Op::MeanRows(x) => {
                let xv = val(*x);
                let r = xv.rows() as f64;
                let mut dx = Tensor::zeros(xv.shape());
                let c = xv.cols();
                for chunk in dx.data_mut().chunks_mut(c) {
                    chunk.iter_mut().zip(g.data()).for_each(|(d, v)| *d = v / r);
                }
                accumulate(grads, *x, dx);
            }
            Op::SumAll(x) => accumulate(grads, *x, Tensor::full(val(*x).shape(), g.data()[0])),
            Op::L2NormalizeRows { x, norms } => {
                // d(x/|x|) = (g − y·(g·y)) / |x|
                let y = &node.value;
                let c = y.cols();
                let mut dx = Tensor::zeros(y.shape());
                for (r, dxr) in dx.data_mut().chunks_mut(c).enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dxr[j] = (gr[j] - yr[j] * dot) / norms[r];
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Gather { table, ids } => {
                let tv = val(*table);
                let c = tv.cols();
                let mut dt = Tensor::zeros(tv.shape());
                for (k, &i) in ids.iter().enumerate() {
                    let dst = &mut dt.data_mut()[i * c..(i + 1) * c];
                    dst.iter_mut().zip(g.row(k)).for_each(|(d, v)| *d += v);
                }
                accumulate(grads, *table, dt);
            }
            Op::SliceRows { x, start } => {
                let xv = val(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, dx);
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let (c, len) = (xv.cols(), g.cols());
                let mut dx = Tensor::zeros(xv.shape());
                for (r, chunk) in dx.data_mut().chunks_mut(c).enumerate() {
                    chunk[*start..start + len].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = val(p).shape().to_vec();
                    let n = val(p).len();
                    let part = Tensor::new(shape, g.data()[offset..offset + n].to_vec()).expect("part shape");
                    offset += n;
                    accumulate(grads, p, part);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    let data: Vec<f64> = g.data().chunks(g.cols()).flat_map(|r| r[offset..offset + pc].iter().copied()).collect();
                    offset += pc;
                    accumulate(grads, p, Tensor::new(val(p).shape().to_vec(), data).expect("part shape"));
                }
            }
            Op::Resample { x, taps } => {
                let xv = val(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                for (i, &(lo, hi, w)) in taps.iter().enumerate() {
                    let gr = g.row(i);
                    let d = dx.data_mut();
                    for j in 0..c {
                        d[lo * c + j] += (1.0 - w) * gr[j];
                        d[hi * c + j] += w * gr[j];
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropyDiag { logits, probs } => {
                let b = val(*logits).rows();
                let scale = g.data()[0] / b as f64;
                let mut d = probs.clone();
                for i in 0..b {
                    d[i * b + i] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= scale);
                accumulate(grads, *logits, Tensor::new(vec![b, b], d).expect("square"));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Gradient w.r.t. the (scaled) softmax input given output `p` and upstream `g`.
fn softmax_backward(p: &Tensor, g: &Tensor, scale: f64) -> Tensor {
    let c = p.cols();
    let mut out = Tensor::zeros(p.shape());
    for (r, o) in out.data_mut().chunks_mut(c).enumerate() {
        let (pr, gr) = (p.row(r), g.row(r));
        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..c {
            o[j] = scale * pr[j] * (gr[j] - dot);
        }
    }
    out
}

fn im2col(x: &Tensor, out_len: usize) -> Tensor {
    let (t, d) = (x.rows(), x.cols());
    let mut col = Tensor::zeros(&[out_len, 3 * d]);
    for (o, row) in col.data_mut().chunks_mut(3 * d).enumerate() {
        for j in 0..3 {
            let src = (2 * o + j) as isize - 1;
            if src >= 0 && (src as usize) < t {
                row[j * d..(j + 1) * d].copy_from_slice(x.row(src as usize));
            }
        }
    }
    col
}

fn col2im_add(dcol: &Tensor, dx: &mut Tensor) {
    let (t, d) = (dx.rows(), dx.cols());
    for o in 0..dcol.rows() {
        let row = dcol.row(o);
        for j in 0..3 {
            let src = (2 * o + j) as isize - 1;
            if src >= 0 && (src as usize) < t {
                let s = src as usize;
                let dst = &mut dx.data_mut()[s * d..(s + 1) * d];
                dst.iter_mut().zip(&row[j * d..(j + 1) * d]).for_each(|(a, b)| *a += b);
            }
        }
    }
}

fn resample_taps(n: usize, len: usize) -> Vec<(usize, usize, f64)> {
    (0..len)
        .map(|i| {
            let pos = if len == 1 { (n - 1) as f64 / 2.0 } else { (i * (n - 1)) as f64 / (len - 1) as f64 };
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}
