//! Clip-level train/val/test assignment, stratified by genre and spread
//! across performers.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Split};
use crate::error::{CoreError, Result};

/// Largest share of the test split one performer may hold.
pub const MAX_PERFORMER_SHARE: f64 = 0.4;
/// Genres with at least this many clips must appear in the test split.
pub const MIN_GENRE_CLIPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(CoreError::Config(format!("split ratios must be in [0, 1] and sum to 1, got {all:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintReport {
    pub issues: Vec<String>,
    pub test_size: usize,
    /// Fraction of test clips per performer.
    pub performer_shares: BTreeMap<String, f64>,
}

impl ConstraintReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

impl std::fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} issue(s) over {} test clips: {}", self.issues.len(), self.test_size, self.issues.join("; "))
    }
}

/// Checks the test split: no performer above 40% of it, and every genre
/// with at least five clips represented.
pub fn check_constraints(manifest: &Manifest) -> ConstraintReport {
    let mut report = ConstraintReport::default();
    let test: Vec<_> = manifest.split(Split::Test).collect();
    report.test_size = test.len();
    if test.is_empty() {
        report.issues.push("test split is empty".into());
        return report;
    }
    let mut per_performer: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &test {
        *per_performer.entry(&e.performer).or_default() += 1;
    }
    for (p, n) in per_performer {
        let share = n as f64 / test.len() as f64;
        report.performer_shares.insert(p.to_string(), share);
        if share > MAX_PERFORMER_SHARE {
            report.issues.push(format!("performer {p} holds {:.1}% of the test split", 100.0 * share));
        }
    }
    let mut per_genre: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &manifest.entries {
        *per_genre.entry(&e.tags.genre).or_default() += 1;
    }
    let tested: BTreeSet<&str> = test.iter().map(|e| e.tags.genre.as_str()).collect();
    for (g, n) in per_genre {
        if n >= MIN_GENRE_CLIPS && !tested.contains(g) {
            report.issues.push(format!("genre {g} ({n} clips) is missing from the test split"));
        }
    }
    report
}

fn quota(n: usize, ratio: f64) -> usize {
    let q = (n as f64 * ratio).round() as usize;
    if n >= MIN_GENRE_CLIPS && ratio > 0.0 {
        q.max(1)
    } else {
        q
    }
}

/// Assigns every entry a split. Per genre, test and val quotas follow the
/// ratios (at least one clip each for genres with five or more clips); the
/// clips are drawn one at a time from the genre's performer whose global
/// count in that split is lowest, so no performer dominates. Violations of
/// the test-split constraints are returned as [`CoreError::Split`].
pub fn make_splits(manifest: &Manifest, ratios: SplitRatios, seed: u64) -> Result<Manifest> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // genre -> performer -> entry indices (shuffled)
    let mut cells: BTreeMap<&str, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        cells.entry(&e.tags.genre).or_default().entry(&e.performer).or_default().push(i);
    }
    for perf in cells.values_mut() {
        for list in perf.values_mut() {
            list.sort_by(|&a, &b| manifest.entries[a].clip_id.cmp(&manifest.entries[b].clip_id));
            list.shuffle(&mut rng);
        }
    }

    let mut out = manifest.clone();
    let mut counts: BTreeMap<(Split, &str), usize> = BTreeMap::new();
    for (_genre, perf) in cells.iter_mut() {
        let n: usize = perf.values().map(Vec::len).sum();
        let n_test = quota(n, ratios.test);
        let n_val = quota(n, ratios.val).min(n - n_test.min(n));
        let mut order: Vec<&str> = perf.keys().copied().collect();
        order.shuffle(&mut rng);
        for (split, want) in [(Split::Test, n_test.min(n)), (Split::Val, n_val)] {
            for _ in 0..want {
                let p = order
                    .iter()
                    .copied()
                    .filter(|p| !perf[p].is_empty())
                    .min_by_key(|p| counts.get(&(split, *p)).copied().unwrap_or(0))
                    .expect("quota never exceeds the genre size");
                let idx = perf.get_mut(p).expect("performer present").pop().expect("non-empty");
                out.entries[idx].split = Some(split);
                *counts.entry((split, p)).or_default() += 1;
            }
        }
        for list in perf.values_mut() {
            for idx in list.drain(..) {
                out.entries[idx].split = Some(Split::Train);
            }
        }
    }

    let report = check_constraints(&out);
    if report.is_ok() {
        Ok(out)
    } else {
        Err(CoreError::Split(report))
    }
}
