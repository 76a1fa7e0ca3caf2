//! Transformer encoders for music and motion, and the text encoder
//! (provider + MLP adapter).

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use tdr_tensor::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::config::{ModelConfig, TextProviderKind};
use crate::error::{CoreError, Result};
use crate::text::{FileEmbeddings, TextQuery};

/// Source of dropout masks; `None` runs in evaluation mode.
pub type DropoutRng<'a> = Option<&'a mut (dyn RngCore + 'static)>;

/// Glorot-uniform matrix.
pub(crate) fn xavier(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-a..a)).collect()).expect("shape matches")
}

pub(crate) fn normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

/// Scaled dot-product attention `softmax(q·kᵀ/√d_k)·v`, `d_k = q.cols`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let d_k = tape.value(q).cols();
    let p = tape.attn_probs(q, k, 1.0 / (d_k as f64).sqrt())?;
    Ok(tape.matmul(p, v)?)
}

/// Affine map `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), xavier(rng, &[d_in, d_out], d_in, d_out));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[d_out]));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w), tape.param(store, self.b));
        let h = tape.matmul(x, w)?;
        Ok(tape.add_row(h, b)?)
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.g"), Tensor::full(&[d], 1.0)),
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[d])),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, eps: f64) -> Result<Var> {
        let (g, b) = (tape.param(store, self.gain), tape.param(store, self.bias));
        Ok(tape.layer_norm(x, g, b, eps)?)
    }
}

/// Pre-norm Transformer block: multi-head self-attention and a GELU
/// feed-forward layer, each wrapped in a residual connection.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
    heads: usize,
    dropout: f64,
    eps: f64,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d;
        let hidden = d * cfg.ffn_mult;
        Self {
            ln1: Norm::new(store, &format!("{name}.ln1"), d),
            q: Linear::new(store, &format!("{name}.attn.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.attn.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.attn.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.attn.o"), d, d, rng),
            ln2: Norm::new(store, &format!("{name}.ln2"), d),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, hidden, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), hidden, d, rng),
            heads: cfg.heads,
            dropout: cfg.dropout,
            eps: cfg.ln_eps,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, mut rng: DropoutRng) -> Result<Var> {
        let a = self.ln1.forward(tape, store, h, self.eps)?;
        let q = self.q.forward(tape, store, a)?;
        let k = self.k.forward(tape, store, a)?;
        let v = self.v.forward(tape, store, a)?;
        let d_k = tape.value(q).cols() / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let qi = tape.slice_cols(q, i * d_k, d_k)?;
            let ki = tape.slice_cols(k, i * d_k, d_k)?;
            let vi = tape.slice_cols(v, i * d_k, d_k)?;
            outs.push(attention(tape, qi, ki, vi)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let o = self.o.forward(tape, store, cat)?;
        let o = tape.dropout(o, self.dropout, rng.as_deref_mut());
        let h = tape.add(h, o)?;

        let f = self.ln2.forward(tape, store, h, self.eps)?;
        let f = self.ff1.forward(tape, store, f)?;
        let f = tape.gelu(f);
        let f = self.ff2.forward(tape, store, f)?;
        let f = tape.dropout(f, self.dropout, rng.as_deref_mut());
        Ok(tape.add(h, f)?)
    }
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<TransformerBlock>,
    down_w: ParamId,
    down_b: ParamId,
}

/// Input projection, learned positional table, then per stage a stack of
/// Transformer blocks followed by a stride-2 temporal convolution.
#[derive(Debug, Clone)]
pub struct TemporalEncoder {
    name: String,
    input: Linear,
    pos: ParamId,
    stages: Vec<Stage>,
    in_dim: usize,
    max_len: usize,
}

impl TemporalEncoder {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d;
        let input = Linear::new(store, &format!("{name}.input"), in_dim, d, rng);
        let pos = store.add(format!("{name}.pos"), normal(rng, &[cfg.max_len, d], 0.02));
        let stages = (0..cfg.stages)
            .map(|s| {
                let blocks = (0..cfg.layers_per_stage)
                    .map(|l| TransformerBlock::new(store, &format!("{name}.stage{s}.block{l}"), cfg, rng))
                    .collect();
                let down_w = store.add(format!("{name}.stage{s}.down.w"), xavier(rng, &[3, d, d], 3 * d, d));
                let down_b = store.add(format!("{name}.stage{s}.down.b"), Tensor::zeros(&[d]));
                Stage { blocks, down_w, down_b }
            })
            .collect();
        Self { name: name.to_string(), input, pos, stages, in_dim, max_len: cfg.max_len }
    }

    pub fn pos_id(&self) -> ParamId {
        self.pos
    }

    /// `[T × in_dim] → [T' × d]` with `T'` the length after every stage.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &Tensor, mut rng: DropoutRng) -> Result<Var> {
        if x.ndim() != 2 || x.cols() != self.in_dim {
            return Err(CoreError::Shape {
                name: format!("{} input", self.name),
                expected: vec![x.rows(), self.in_dim],
                found: x.shape().to_vec(),
            });
        }
        let t = x.rows();
        if t == 0 {
            return Err(CoreError::Input(format!("{} input has no frames", self.name)));
        }
        if t > self.max_len {
            return Err(CoreError::Config(format!("{} input has {t} frames, more than max_len {}", self.name, self.max_len)));
        }
        let x = tape.constant(x.clone());
        let mut h = self.input.forward(tape, store, x)?;
        let table = tape.param(store, self.pos);
        let pos = tape.slice_rows(table, 0, t)?;
        h = tape.add(h, pos)?;
        for stage in &self.stages {
            for block in &stage.blocks {
                h = block.forward(tape, store, h, rng.as_deref_mut())?;
            }
            let (w, b) = (tape.param(store, stage.down_w), tape.param(store, stage.down_b));
            h = tape.conv1d_down(h, w)?;
            h = tape.add_row(h, b)?;
        }
        Ok(h)
    }
}

/// Text provider followed by a two-layer GELU adapter into the shared space.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    kind: TextProviderKind,
    tokens: Option<ParamId>,
    vocab_size: usize,
    d_c: usize,
    mlp1: Linear,
    mlp2: Linear,
    dropout: f64,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let tokens = match cfg.text_provider {
            TextProviderKind::Fallback => Some(store.add("text.tokens", normal(rng, &[cfg.vocab_size, cfg.d_c], 1.0))),
            TextProviderKind::File => None,
        };
        Self {
            kind: cfg.text_provider,
            tokens,
            vocab_size: cfg.vocab_size,
            d_c: cfg.d_c,
            mlp1: Linear::new(store, "adapter.mlp1", cfg.d_c, cfg.adapter_hidden, rng),
            mlp2: Linear::new(store, "adapter.mlp2", cfg.adapter_hidden, cfg.d, rng),
            dropout: cfg.dropout,
        }
    }

    pub fn adapter(&self) -> (Linear, Linear) {
        (self.mlp1, self.mlp2)
    }

    /// The provider's `[1 × d_c]` sentence vector.
    fn provide(&self, tape: &mut Tape, store: &ParamStore, q: &TextQuery, file: Option<&FileEmbeddings>) -> Result<Var> {
        match self.kind {
            TextProviderKind::Fallback => {
                let ids = &q.tokens.ids;
                if ids.is_empty() {
                    return Err(CoreError::Input("empty token sequence".into()));
                }
                if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
                    return Err(CoreError::Input(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
                }
                let table = tape.param(store, self.tokens.expect("fallback provider owns a token table"));
                let rows = tape.gather(table, ids)?;
                Ok(tape.mean_rows(rows))
            }
            TextProviderKind::File => {
                let file = file.ok_or_else(|| CoreError::Config("file-backed text provider has no embeddings loaded".into()))?;
                let id = q
                    .caption_id
                    .as_deref()
                    .ok_or_else(|| CoreError::Lookup(format!("query {:?} has no caption id", q.tokens.raw)))?;
                let row = file.get(id)?;
                if row.len() != self.d_c {
                    return Err(CoreError::Shape { name: "text embedding".into(), expected: vec![self.d_c], found: vec![row.len()] });
                }
                Ok(tape.constant(Tensor::row_vector(row.to_vec())))
            }
        }
    }

    /// `z_t = l2_normalize(MLP₂(GELU(MLP₁(provider(q)))))`, shape `[1 × d]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        q: &TextQuery,
        file: Option<&FileEmbeddings>,
        rng: DropoutRng,
    ) -> Result<Var> {
        let c = self.provide(tape, store, q, file)?;
        let h = self.mlp1.forward(tape, store, c)?;
        let h = tape.gelu(h);
        let h = tape.dropout(h, self.dropout, rng);
        let z = self.mlp2.forward(tape, store, h)?;
        Ok(tape.l2_normalize_rows(z)?)
    }
}
