//! Exact cosine-similarity gallery, ranking and recall metrics.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use tdr_tensor::Tensor;

use crate::data::Sample;
use crate::error::{CoreError, Result};
use crate::loss::NORM_TOLERANCE;
use crate::model::Model;
use crate::text::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub genre: String,
    #[serde(default)]
    pub performer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    embeddings: Tensor,
    ids: Vec<String>,
    genres: Vec<String>,
    performers: Vec<String>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_norm(what: &str, v: &[f64]) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() <= NORM_TOLERANCE {
        Ok(())
    } else {
        Err(CoreError::Index(format!("{what} has norm {n}, expected 1")))
    }
}

impl GalleryIndex {
    pub fn build(records: &[EmbeddingRecord]) -> Result<Self> {
        let first = records.first().ok_or_else(|| CoreError::Index("no records".into()))?;
        let d = first.embedding.len();
        if d == 0 {
            return Err(CoreError::Index("zero-dimensional embeddings".into()));
        }
        let mut seen = HashSet::new();
        let mut data = Vec::with_capacity(records.len() * d);
        for r in records {
            if !seen.insert(r.id.as_str()) {
                return Err(CoreError::Index(format!("duplicate id {:?}", r.id)));
            }
            if r.embedding.len() != d {
                return Err(CoreError::Index(format!("record {:?} has dimension {}, expected {d}", r.id, r.embedding.len())));
            }
            check_norm(&format!("record {:?}", r.id), &r.embedding)?;
            data.extend_from_slice(&r.embedding);
        }
        Ok(Self {
            embeddings: Tensor::new(vec![records.len(), d], data)?,
            ids: records.iter().map(|r| r.id.clone()).collect(),
            genres: records.iter().map(|r| r.genre.clone()).collect(),
            performers: records.iter().map(|r| r.performer.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn genre(&self, i: usize) -> &str {
        &self.genres[i]
    }

    pub fn performer(&self, i: usize) -> &str {
        &self.performers[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn records(&self) -> Vec<EmbeddingRecord> {
        (0..self.len())
            .map(|i| EmbeddingRecord {
                id: self.ids[i].clone(),
                embedding: self.embeddings.row(i).to_vec(),
                genre: self.genres[i].clone(),
                performer: self.performers[i].clone(),
            })
            .collect()
    }

    fn scores(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(CoreError::Shape { name: "query embedding".into(), expected: vec![self.dim()], found: vec![z.len()] });
        }
        check_norm("query", z)?;
        Ok((0..self.len()).map(|i| tdr_tensor::dot(self.embeddings.row(i), z)).collect())
    }

    /// Full ranking of the gallery for `z`: score descending, ties by
    /// ascending id. Only the first `k` entries are kept; the positive's
    /// rank is computed over the full ordering.
    pub fn query(&self, z: &[f64], k: usize, positive: Option<&str>) -> Result<RankResult> {
        if k == 0 || k > self.len() {
            return Err(CoreError::Input(format!("k must lie in 1..={}, got {k}", self.len())));
        }
        let scores = self.scores(z)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| self.ids[a].cmp(&self.ids[b])));
        let rank_of_positive = match positive {
            Some(p) => Some(
                order
                    .iter()
                    .position(|&i| self.ids[i] == p)
                    .map(|r| r + 1)
                    .ok_or_else(|| CoreError::Lookup(format!("positive {p:?} not in the gallery")))?,
            ),
            None => None,
        };
        Ok(RankResult {
            top: order.iter().take(k).map(|&i| Ranked { id: self.ids[i].clone(), score: scores[i], index: i }).collect(),
            rank_of_positive,
        })
    }

    /// 1-based rank of `positive` without sorting the whole gallery.
    pub fn rank_of(&self, z: &[f64], positive: &str) -> Result<usize> {
        let scores = self.scores(z)?;
        let p = self.position(positive).ok_or_else(|| CoreError::Lookup(format!("positive {positive:?} not in the gallery")))?;
        let ahead = (0..self.len())
            .filter(|&j| scores[j] > scores[p] || (scores[j] == scores[p] && self.ids[j] < self.ids[p]))
            .count();
        Ok(ahead + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranked {
    pub id: String,
    pub score: f64,
    /// Row in the gallery.
    #[serde(skip)]
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankResult {
    pub top: Vec<Ranked>,
    pub rank_of_positive: Option<usize>,
}

fn non_empty(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        return Err(CoreError::Metrics("empty rank list".into()));
    }
    if ranks.contains(&0) {
        return Err(CoreError::Metrics("ranks are 1-based".into()));
    }
    Ok(())
}

/// Percentage of ranks `≤ k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    non_empty(ranks)?;
    Ok(100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Median rank; for an even count the lower of the two middle values.
pub fn median_rank(ranks: &[usize]) -> Result<f64> {
    non_empty(ranks)?;
    let mut s = ranks.to_vec();
    s.sort_unstable();
    Ok(s[(s.len() - 1) / 2] as f64)
}

pub fn mean_rank(ranks: &[usize]) -> Result<f64> {
    non_empty(ranks)?;
    Ok(ranks.iter().sum::<usize>() as f64 / ranks.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub medr: f64,
    pub mnr: f64,
    pub n_queries: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        Ok(Self {
            r1: recall_at_k(ranks, 1)?,
            r5: recall_at_k(ranks, 5)?,
            r10: recall_at_k(ranks, 10)?,
            medr: median_rank(ranks)?,
            mnr: mean_rank(ranks)?,
            n_queries: ranks.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub overall: Metrics,
    pub per_genre: BTreeMap<String, Metrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows in R@1, R@5, R@10, MedR, MnR column order, overall first.
    pub fn to_csv(&self, method: &str) -> String {
        let row = |name: &str, m: &Metrics| format!("{name},{:.2},{:.2},{:.2},{:.1},{:.2},{}\n", m.r1, m.r5, m.r10, m.medr, m.mnr, m.n_queries);
        let mut s = String::from("method,R@1,R@5,R@10,MedR,MnR,n_queries\n");
        s.push_str(&row(method, &self.overall));
        for (g, m) in &self.per_genre {
            s.push_str(&row(&format!("{method}/{g}"), m));
        }
        s
    }
}

/// One text query with the gallery id of its positive clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub positive: String,
    pub genre: String,
    pub embedding: Vec<f64>,
}

/// Ranks every query against the gallery and aggregates overall and per
/// genre (the genre of the query's positive clip).
pub fn evaluate_embeddings(index: &GalleryIndex, queries: &[QueryRecord]) -> Result<MetricsReport> {
    let mut ranks = Vec::with_capacity(queries.len());
    let mut by_genre: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for q in queries {
        let r = index.rank_of(&q.embedding, &q.positive)?;
        ranks.push(r);
        by_genre.entry(q.genre.clone()).or_default().push(r);
    }
    let per_genre = by_genre.iter().map(|(g, r)| Ok((g.clone(), Metrics::from_ranks(r)?))).collect::<Result<_>>()?;
    Ok(MetricsReport { overall: Metrics::from_ranks(&ranks)?, per_genre })
}

/// Dance embeddings for `samples`, in order.
pub fn embed_gallery(model: &Model, samples: &[Sample]) -> Result<Vec<EmbeddingRecord>> {
    samples
        .iter()
        .map(|s| {
            Ok(EmbeddingRecord {
                id: s.clip_id.clone(),
                embedding: model.embed_dance(&s.music.frames, &s.motion)?,
                genre: s.genre.clone(),
                performer: s.performer.clone(),
            })
        })
        .collect()
}

/// Text-to-dance evaluation: each sample's caption queries the gallery of
/// all samples' dances.
pub fn evaluate(model: &Model, vocab: &Vocabulary, samples: &[Sample]) -> Result<MetricsReport> {
    let index = GalleryIndex::build(&embed_gallery(model, samples)?)?;
    let queries = samples
        .iter()
        .map(|s| Ok(QueryRecord { positive: s.clip_id.clone(), genre: s.genre.clone(), embedding: model.embed_text(&s.query(vocab)?)? }))
        .collect::<Result<Vec<_>>>()?;
    evaluate_embeddings(&index, &queries)
}
