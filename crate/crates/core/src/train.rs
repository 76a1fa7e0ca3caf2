//! Balanced batch sampling, Adam and the contrastive training step.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tdr_tensor::{ParamStore, Tape, Tensor};

use crate::config::TrainConfig;
use crate::data::Sample;
use crate::error::{CoreError, Result};
use crate::encoder::DropoutRng;
use crate::loss::info_nce_var;
use crate::model::{Model, ParamGroup};
use crate::text::Vocabulary;

/// Balancing attributes of one training item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemKey {
    pub genre: String,
    pub performer: String,
}

impl From<&Sample> for ItemKey {
    fn from(s: &Sample) -> Self {
        Self { genre: s.genre.clone(), performer: s.performer.clone() }
    }
}

/// Interleaves the performers' shuffled lists so consecutive draws from a
/// bucket cycle through performers.
fn interleave_performers<R: Rng + ?Sized>(items: &[usize], keys: &[ItemKey], by_performer: bool, rng: &mut R) -> Vec<usize> {
    if !by_performer {
        let mut v = items.to_vec();
        v.shuffle(rng);
        return v;
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in items {
        groups.entry(&keys[i].performer).or_default().push(i);
    }
    let mut lists: Vec<Vec<usize>> = groups.into_values().collect();
    for l in &mut lists {
        l.shuffle(rng);
    }
    lists.shuffle(rng);
    let longest = lists.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest).flat_map(|r| lists.iter().filter_map(move |l| l.get(r).copied())).collect()
}

/// One epoch of batches: every item exactly once. With `genre` balancing
/// the order is a round-robin over shuffled genre buckets; with
/// `performer` balancing each bucket cycles through its performers. Fewer
/// than two genres falls back to a uniform shuffle with a warning.
pub fn epoch_plan<R: Rng + ?Sized>(keys: &[ItemKey], batch_size: usize, balance: &[String], rng: &mut R) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..keys.len()).collect();
    let by_genre = balance.iter().any(|k| k == "genre");
    let by_performer = balance.iter().any(|k| k == "performer");
    let mut buckets: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        buckets.entry(&k.genre).or_default().push(i);
    }
    let order: Vec<usize> = if by_genre && buckets.len() >= 2 {
        let mut lists: Vec<Vec<usize>> = buckets.into_values().map(|b| interleave_performers(&b, keys, by_performer, rng)).collect();
        lists.shuffle(rng);
        let longest = lists.iter().map(Vec::len).max().unwrap_or(0);
        (0..longest).flat_map(|r| lists.iter().filter_map(move |l| l.get(r).copied())).collect()
    } else {
        if by_genre {
            log::warn!("only {} distinct genre(s); falling back to uniform batch sampling", buckets.len());
        }
        let mut v = all;
        v.shuffle(rng);
        v
    };
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// The first batch of a fresh epoch plan.
pub fn sample_batch<R: Rng + ?Sized>(keys: &[ItemKey], batch_size: usize, balance: &[String], rng: &mut R) -> Vec<usize> {
    epoch_plan(keys, batch_size, balance, rng).into_iter().next().unwrap_or_default()
}

/// Adam moments, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One bias-corrected update with a learning rate per parameter.
    pub fn step(&mut self, store: &mut ParamStore, lrs: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let lr = lrs[k];
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let g = p.grad.data();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: Adam,
    pub epoch: usize,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub loss_history: Vec<f64>,
}

impl TrainState {
    /// Sets τ to `config.tau_init` and seeds the sampling/dropout stream.
    pub fn new(mut model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.set_tau(config.tau_init)?;
        let adam = Adam::new(&model.store);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self { model, config, adam, epoch: 0, step: 0, rng, loss_history: Vec::new() })
    }

    fn learning_rates(&self) -> Vec<f64> {
        self.model
            .store
            .ids()
            .map(|id| match self.model.group(id) {
                ParamGroup::TextProvider => self.config.lr * self.config.text_lr_scale,
                _ => self.config.lr,
            })
            .collect()
    }

    /// Names the first parameter group holding a non-finite value or gradient.
    fn non_finite_group(&self) -> String {
        let store = &self.model.store;
        store
            .iter()
            .find(|(_, p)| !p.value.is_finite())
            .or_else(|| store.iter().find(|(_, p)| !p.grad.is_finite()))
            .map(|(id, p)| format!("{} ({})", self.model.group(id).name(), p.name))
            .unwrap_or_else(|| "loss (all parameters and gradients finite)".into())
    }

    /// Loss of `batch` under the current parameters, with dropout drawn
    /// from `rng` when given.
    pub fn batch_loss(&self, tape: &mut Tape, batch: &[&Sample], vocab: &Vocabulary, mut rng: DropoutRng) -> Result<tdr_tensor::Var> {
        if batch.is_empty() {
            return Err(CoreError::Input("empty batch".into()));
        }
        let m = &self.model;
        let mut zt = Vec::with_capacity(batch.len());
        let mut zd = Vec::with_capacity(batch.len());
        for s in batch {
            zt.push(m.text_var(tape, &s.query(vocab)?, rng.as_deref_mut())?);
            zd.push(m.dance_var(tape, &s.music.frames, &s.motion, rng.as_deref_mut())?);
        }
        let zt = tape.concat_rows(&zt)?;
        let zd = tape.concat_rows(&zd)?;
        let log_tau = tape.param(&m.store, m.log_tau_id());
        info_nce_var(tape, zt, zd, log_tau, self.config.symmetric_loss)
    }

    /// Forward, backward and one Adam update. Returns the loss before the
    /// update. Gradients are zeroed afterwards.
    pub fn train_step(&mut self, batch: &[&Sample], vocab: &Vocabulary) -> Result<f64> {
        self.model.store.zero_grad();
        let mut tape = Tape::new();
        let mut rng = self.rng.clone();
        let loss = match self.batch_loss(&mut tape, batch, vocab, Some(&mut rng)) {
            Ok(l) => l,
            // A non-finite parameter usually surfaces as a degenerate forward
            // op; report it by group rather than by op.
            Err(CoreError::Tensor(_)) if self.model.store.iter().any(|(_, p)| !p.value.is_finite()) => {
                return Err(CoreError::NonFinite { step: self.step, group: self.non_finite_group() });
            }
            Err(e) => return Err(e),
        };
        self.rng = rng;
        let value = tape.value(loss).data()[0];
        tape.backward(loss, &mut self.model.store)?;
        drop(tape);
        let grads_finite = self.model.store.iter().all(|(_, p)| p.grad.is_finite());
        if !value.is_finite() || !grads_finite {
            let group = self.non_finite_group();
            self.model.store.zero_grad();
            return Err(CoreError::NonFinite { step: self.step, group });
        }
        let lrs = self.learning_rates();
        self.adam.step(&mut self.model.store, &lrs, &self.config);
        self.model.store.zero_grad();
        self.step += 1;
        self.loss_history.push(value);
        Ok(value)
    }

    /// One epoch over `samples`, logging one JSON line per step to `log`.
    pub fn run_epoch(&mut self, samples: &[Sample], vocab: &Vocabulary, mut log: Option<&mut dyn Write>) -> Result<f64> {
        let keys: Vec<ItemKey> = samples.iter().map(ItemKey::from).collect();
        let plan = epoch_plan(&keys, self.config.batch_size, &self.config.balance_keys, &mut self.rng);
        let mut total = 0.0;
        for batch in &plan {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &samples[i]).collect();
            let loss = self.train_step(&refs, vocab)?;
            total += loss;
            if let Some(w) = log.as_deref_mut() {
                let rec = LogRecord { step: self.step, epoch: self.epoch, loss, tau: self.model.tau() };
                writeln!(w, "{}", serde_json::to_string(&rec)?)?;
            }
        }
        self.epoch += 1;
        Ok(total / plan.len().max(1) as f64)
    }
}
