//! `synth` and `features`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tdr_audio::{extract_music_features, AudioClip, FeatureStats};
use tdr_core::data::{generate, make_splits, ClipManifestEntry, Manifest, Split};
use tdr_core::CoreError;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io::{base_dir, create_dir, prepare_out_dir, read_json, write_json};

pub const MANIFEST: &str = "manifest.jsonl";
pub const FEATURE_STATS: &str = "feature_stats.json";
const FEATURE_LOCK: &str = "features.lock.json";

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub clips: usize,
    pub genres: usize,
    pub performers: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub manifest: PathBuf,
}

/// Writes motion (TDT1), audio (16-bit WAV) and a split manifest to `out`.
pub fn synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<SynthSummary> {
    prepare_out_dir(out, force)?;
    let corpus = generate(&cfg.synth)?;
    let manifest = make_splits(&corpus.manifest(), cfg.split, cfg.seed)?;
    create_dir(&out.join("motion"))?;
    create_dir(&out.join("audio"))?;
    for (clip, entry) in corpus.clips.iter().zip(&manifest.entries) {
        tdr_tensor::io::save(out.join(&entry.motion_path), &corpus.motion(clip).frames)?;
        corpus.audio(clip).write_wav(out.join(&entry.audio_path))?;
    }
    let path = out.join(MANIFEST);
    manifest.save(&path)?;
    cfg.echo(out)?;
    Ok(SynthSummary {
        clips: manifest.entries.len(),
        genres: cfg.synth.n_genres,
        performers: cfg.synth.performers,
        train: manifest.split(Split::Train).count(),
        val: manifest.split(Split::Val).count(),
        test: manifest.split(Split::Test).count(),
        manifest: path,
    })
}

/// Input hash per clip, used to skip unchanged work on reruns.
#[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
struct FeatureLock {
    clips: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
pub struct FeatureSummary {
    pub clips: usize,
    pub extracted: usize,
    pub width: usize,
    pub up_to_date: bool,
    pub manifest: PathBuf,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).map_err(CliError::io(path))
}

/// Extracts raw features per clip into `out/features`, fits the
/// standardization statistics on the train split and writes a manifest
/// whose audio paths point at the cached features. Clips whose audio is
/// unchanged since the last run are not recomputed; when nothing changed
/// nothing is written.
pub fn features(manifest_path: &Path, out: &Path) -> Result<FeatureSummary> {
    let manifest = Manifest::load(manifest_path)?;
    let base = base_dir(manifest_path);
    let mut missing = Vec::new();
    let mut hashes = BTreeMap::new();
    for e in &manifest.entries {
        let audio = ClipManifestEntry::resolve(base, &e.audio_path);
        let motion = ClipManifestEntry::resolve(base, &e.motion_path);
        match sha256_file(&audio) {
            Ok(h) => {
                hashes.insert(e.clip_id.clone(), h);
            }
            Err(_) => missing.push(format!("{}: audio {} not readable", e.clip_id, audio.display())),
        }
        if !motion.is_file() {
            missing.push(format!("{}: motion {} not found", e.clip_id, motion.display()));
        }
    }
    if !missing.is_empty() {
        return Err(CoreError::Missing(missing).into());
    }

    create_dir(&out.join("features"))?;
    let lock_path = out.join(FEATURE_LOCK);
    let previous: FeatureLock = if lock_path.is_file() { read_json(&lock_path)? } else { FeatureLock::default() };
    let feature_rel = |id: &str| format!("features/{id}.tdt");
    let out_manifest = out.join(MANIFEST);
    let stats_path = out.join(FEATURE_STATS);

    let mut extracted = 0;
    let mut rewritten = manifest.clone();
    for (e, r) in manifest.entries.iter().zip(rewritten.entries.iter_mut()) {
        let target = out.join(feature_rel(&e.clip_id));
        if previous.clips.get(&e.clip_id) != hashes.get(&e.clip_id) || !target.is_file() {
            let clip = AudioClip::read_wav(ClipManifestEntry::resolve(base, &e.audio_path))?;
            let f = extract_music_features(&clip, None)?;
            tdr_tensor::io::save(&target, &f.frames)?;
            extracted += 1;
        }
        r.audio_path = feature_rel(&e.clip_id);
        r.motion_path = absolute(&ClipManifestEntry::resolve(base, &e.motion_path))?.to_string_lossy().into_owned();
    }
    let lock = FeatureLock { clips: hashes };
    let unchanged = extracted == 0
        && lock == previous
        && stats_path.is_file()
        && Manifest::load(&out_manifest).ok().as_ref() == Some(&rewritten);
    if unchanged {
        return Ok(FeatureSummary { clips: manifest.entries.len(), extracted, width: tdr_audio::FEATURE_DIM, up_to_date: true, manifest: out_manifest });
    }

    let train: Vec<_> = rewritten
        .split(Split::Train)
        .map(|e| tdr_core::data::dataset::load_music(&out.join(&e.audio_path)))
        .collect::<tdr_core::Result<_>>()?;
    if train.is_empty() {
        return Err(CoreError::Input("manifest has no train split to fit feature statistics on".into()).into());
    }
    let stats = FeatureStats::compute("train", train.iter())?;
    stats.save(&stats_path)?;
    rewritten.save(&out_manifest)?;
    write_json(&lock_path, &lock)?;
    Ok(FeatureSummary { clips: manifest.entries.len(), extracted, width: tdr_audio::FEATURE_DIM, up_to_date: false, manifest: out_manifest })
}
