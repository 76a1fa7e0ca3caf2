//! `train`, plus loading a trained run back for `embed`, `query` and `eval`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tdr_audio::FeatureStats;
use tdr_core::checkpoint::{load_checkpoint, save_checkpoint, stats_hash};
use tdr_core::data::{dataset, Manifest, Sample, Split};
use tdr_core::text::FileEmbeddings;
use tdr_core::{retrieval, Model, TextProviderKind, TrainState, Vocabulary};

use crate::config::{RunConfig, RESOLVED_CONFIG};
use crate::corpus::FEATURE_STATS;
use crate::error::{CliError, Result};
use crate::io::{base_dir, prepare_out_dir};

pub const VOCAB: &str = "vocab.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const INIT_CKPT: &str = "init.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";

fn file_embeddings(cfg: &RunConfig) -> Result<Option<FileEmbeddings>> {
    if cfg.model.text_provider != TextProviderKind::File {
        return Ok(None);
    }
    let (Some(m), Some(i)) = (&cfg.text.matrix, &cfg.text.index) else {
        return Err(CliError::Usage("the file text provider needs text.matrix and text.index".into()));
    };
    Ok(Some(FileEmbeddings::load(m, i)?))
}

/// Samples of `split` with music standardized by `stats` when given.
pub fn load_split(manifest: &Path, split: Option<Split>, stats: Option<&FeatureStats>) -> Result<Vec<Sample>> {
    let m = Manifest::load(manifest)?;
    let mut samples = dataset::load_samples(&m, base_dir(manifest), split)?;
    if let Some(stats) = stats {
        dataset::standardize(&mut samples, stats);
    }
    Ok(samples)
}

#[derive(Debug, Serialize)]
struct EpochRecord {
    epoch: usize,
    mean_loss: f64,
    tau: f64,
    val_r1: Option<f64>,
    val_medr: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: u64,
    pub best_val_r1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub checkpoint: PathBuf,
}

pub fn train(cfg: &RunConfig, manifest: &Path, out: &Path, force: bool) -> Result<TrainSummary> {
    prepare_out_dir(out, force)?;
    let raw_train = load_split(manifest, Some(Split::Train), None)?;
    if raw_train.is_empty() {
        return Err(tdr_core::CoreError::Input(format!("{} has no train split", manifest.display())).into());
    }
    let stats = if cfg.train.standardize_features { Some(dataset::fit_feature_stats(&raw_train)?) } else { None };
    let mut train = raw_train;
    if let Some(s) = &stats {
        dataset::standardize(&mut train, s);
        s.save(out.join(FEATURE_STATS))?;
    }
    let val = load_split(manifest, Some(Split::Val), stats.as_ref())?;
    let vocab = dataset::vocabulary(&train);
    vocab.save(out.join(VOCAB))?;

    let mut cfg = cfg.clone();
    cfg.model.vocab_size = vocab.len();
    cfg.echo(out)?;
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    if let Some(fe) = file_embeddings(&cfg)? {
        model = model.with_file_embeddings(fe)?;
    }
    let mut state = TrainState::new(model, cfg.train.clone())?;
    let (vh, sh) = (vocab.hash(), stats.as_ref().map(stats_hash));
    let save = |state: &TrainState, name: &str| -> Result<PathBuf> {
        let path = out.join(name);
        save_checkpoint(state, &vh, sh.as_deref(), &path)?;
        Ok(path)
    };

    if cfg.train.epochs == 0 {
        let path = save(&state, INIT_CKPT)?;
        return Ok(TrainSummary { epochs: 0, steps: 0, best_val_r1: None, best_epoch: None, checkpoint: path });
    }

    let log_path = out.join(TRAIN_LOG);
    let mut log = BufWriter::new(File::create(&log_path).map_err(CliError::io(&log_path))?);
    let mut best: Option<(f64, usize)> = None;
    for epoch in 0..cfg.train.epochs {
        let mean_loss = state.run_epoch(&train, &vocab, Some(&mut log))?;
        let val_metrics = if val.is_empty() { None } else { Some(retrieval::evaluate(&state.model, &vocab, &val)?.overall) };
        let rec = EpochRecord {
            epoch,
            mean_loss,
            tau: state.model.tau(),
            val_r1: val_metrics.as_ref().map(|m| m.r1),
            val_medr: val_metrics.as_ref().map(|m| m.medr),
        };
        writeln!(log, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(CliError::io(&log_path))?;
        log::info!("epoch {epoch}: loss {mean_loss:.4}, tau {:.4}, val R@1 {:?}", rec.tau, rec.val_r1);
        save(&state, LAST_CKPT)?;
        let improved = match (rec.val_r1, best) {
            (Some(r), Some((b, _))) => r > b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            best = rec.val_r1.map(|r| (r, epoch));
            save(&state, BEST_CKPT)?;
        }
    }
    log.flush().map_err(CliError::io(&log_path))?;
    let checkpoint = out.join(if best.is_some() { BEST_CKPT } else { LAST_CKPT });
    Ok(TrainSummary { epochs: cfg.train.epochs, steps: state.step, best_val_r1: best.map(|b| b.0), best_epoch: best.map(|b| b.1), checkpoint })
}

/// A trained model with the vocabulary and feature statistics of its run.
pub struct Run {
    pub model: Model,
    pub vocab: Vocabulary,
    pub stats: Option<FeatureStats>,
}

impl Run {
    /// Loads `checkpoint` and the run artifacts stored beside it, checking
    /// that they are the ones the checkpoint was trained with.
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let dir = base_dir(checkpoint);
        let ck = load_checkpoint(checkpoint)?;
        let vocab = Vocabulary::load(dir.join(VOCAB))?;
        let stats_path = dir.join(FEATURE_STATS);
        let stats = if ck.header.stats_hash.is_some() { Some(FeatureStats::load(&stats_path)?) } else { None };
        ck.verify_hashes(Some(&vocab.hash()), stats.as_ref().map(stats_hash).as_deref())?;
        let mut model = ck.model()?;
        if model.config.text_provider == TextProviderKind::File {
            let cfg = RunConfig::load(Some(&dir.join(RESOLVED_CONFIG)))?;
            if let Some(fe) = file_embeddings(&cfg)? {
                model = model.with_file_embeddings(fe)?;
            }
        }
        Ok(Self { model, vocab, stats })
    }
}
