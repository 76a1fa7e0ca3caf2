//! `embed`, `index`, `query` and `eval`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tdr_core::data::{Manifest, Split, Tags};
use tdr_core::retrieval::{embed_gallery, evaluate, evaluate_embeddings, EmbeddingRecord, QueryRecord};
use tdr_core::{GalleryIndex, MetricsReport, TextQuery};

use crate::error::{CliError, Result};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::run::{load_split, Run};

/// One gallery clip: its embedding record plus the manifest tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    #[serde(flatten)]
    pub record: EmbeddingRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Tags>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IndexFile {
    pub dim: usize,
    pub entries: Vec<GalleryEntry>,
}

pub fn embed(checkpoint: &Path, manifest: &Path, split: Option<Split>, out: &Path) -> Result<usize> {
    let run = Run::load(checkpoint)?;
    let samples = load_split(manifest, split, run.stats.as_ref())?;
    let tags = Manifest::load(manifest)?;
    let entries: Vec<GalleryEntry> = embed_gallery(&run.model, &samples)?
        .into_iter()
        .map(|record| {
            let tags = tags.entries.iter().find(|e| e.clip_id == record.id).map(|e| e.tags.clone());
            GalleryEntry { record, tags }
        })
        .collect();
    write_jsonl(out, &entries)?;
    Ok(entries.len())
}

fn build(entries: &[GalleryEntry]) -> Result<GalleryIndex> {
    let records: Vec<EmbeddingRecord> = entries.iter().map(|e| e.record.clone()).collect();
    Ok(GalleryIndex::build(&records)?)
}

/// Validates the embeddings and writes them as a single index document.
pub fn index(embeddings: &Path, out: &Path) -> Result<usize> {
    let entries: Vec<GalleryEntry> = read_jsonl(embeddings)?;
    let idx = build(&entries)?;
    write_json(out, &IndexFile { dim: idx.dim(), entries })?;
    Ok(idx.len())
}

#[derive(Debug, Serialize)]
pub struct Hit {
    pub rank: usize,
    pub id: String,
    pub score: f64,
    pub genre: String,
    pub performer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tags: Option<Tags>,
}

pub fn query(checkpoint: &Path, index: &Path, text: &str, caption_id: Option<&str>, k: usize) -> Result<Vec<Hit>> {
    if k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let run = Run::load(checkpoint)?;
    let file: IndexFile = read_json(index)?;
    let idx = build(&file.entries)?;
    let k = if k > idx.len() {
        log::warn!("--k {k} exceeds the gallery size {}; returning all {} clips", idx.len(), idx.len());
        idx.len()
    } else {
        k
    };
    let mut q = TextQuery::new(text, &run.vocab)?;
    if let Some(id) = caption_id {
        q = q.with_id(id);
    }
    let z = run.model.embed_text(&q)?;
    let res = idx.query(&z, k, None)?;
    Ok(res
        .top
        .into_iter()
        .enumerate()
        .map(|(r, hit)| {
            let e = &file.entries[hit.index];
            Hit {
                rank: r + 1,
                id: hit.id,
                score: hit.score,
                genre: e.record.genre.clone(),
                performer: e.record.performer.clone(),
                tags: e.tags.clone(),
            }
        })
        .collect())
}

/// Metrics of a trained model on a manifest split.
pub fn eval_model(checkpoint: &Path, manifest: &Path, split: Split) -> Result<(MetricsReport, String)> {
    let run = Run::load(checkpoint)?;
    let samples = load_split(manifest, Some(split), run.stats.as_ref())?;
    if samples.is_empty() {
        return Err(tdr_core::CoreError::Input(format!("{} has no {split} clips", manifest.display())).into());
    }
    let method = run.model.config.fusion.to_string();
    Ok((evaluate(&run.model, &run.vocab, &samples)?, method))
}

/// Metrics of precomputed gallery and query embeddings.
pub fn eval_embeddings(gallery: &Path, queries_path: &Path) -> Result<MetricsReport> {
    let entries: Vec<GalleryEntry> = read_jsonl(gallery)?;
    let queries: Vec<QueryRecord> = read_jsonl(queries_path)?;
    if queries.is_empty() {
        return Err(tdr_core::CoreError::Input(format!("{} holds no queries", queries_path.display())).into());
    }
    Ok(evaluate_embeddings(&build(&entries)?, &queries)?)
}
