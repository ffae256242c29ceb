use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{record_seed, sample_action, simulate, splitmix64, behavior_seed, ActionParams, ActionSpec, TaskId};
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::{AudioClip, CLIP_SECONDS, RAW_SAMPLE_RATE};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const TRAIN_FRACTION: f64 = 0.8;
const SPLIT_TAG: u64 = 0x5B11_7000_0000_0000;
/// Records simulated in memory before being flushed to disk.
const WRITE_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub behavior_id: u64,
    pub repeat_idx: u32,
    pub seed: u64,
    pub action: ActionParams,
    /// Relative to the dataset root.
    pub audio_path: String,
}

/// Behavior-level split: all repeats of a behavior sit on one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task_id: TaskId,
    pub schema_version: u32,
    pub sample_rate: u32,
    pub channels: usize,
    pub duration_s: f64,
    pub noise_level: f64,
    pub master_seed: u64,
    pub action_spec: ActionSpec,
    pub records: Vec<SampleRecord>,
    pub split: DatasetSplit,
}

impl DatasetManifest {
    /// Records of the given behaviors in (behavior_id, repeat_idx) order.
    pub fn records_for<'a>(&'a self, behaviors: &'a [u64]) -> impl Iterator<Item = &'a SampleRecord> + 'a {
        let set: HashSet<u64> = behaviors.iter().copied().collect();
        self.records.iter().filter(move |r| set.contains(&r.behavior_id))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.action_spec.validate()?;
        if self.action_spec.task_id != self.task_id {
            return Err(Error::Dataset("action spec belongs to a different task".into()));
        }
        let train: BTreeSet<u64> = self.split.train.iter().copied().collect();
        let test: BTreeSet<u64> = self.split.test.iter().copied().collect();
        if let Some(b) = train.intersection(&test).next() {
            return Err(Error::Dataset(format!("behavior {b} appears in both train and test splits")));
        }
        let mut keys = HashSet::new();
        for r in &self.records {
            if !keys.insert((r.behavior_id, r.repeat_idx)) {
                return Err(Error::Dataset(format!(
                    "duplicate record for behavior {} repeat {}",
                    r.behavior_id, r.repeat_idx
                )));
            }
            if !train.contains(&r.behavior_id) && !test.contains(&r.behavior_id) {
                return Err(Error::Dataset(format!("behavior {} is in no split", r.behavior_id)));
            }
            self.action_spec.check(&r.action).map_err(|e| {
                Error::Dataset(format!("record {}/{}: {e}", r.behavior_id, r.repeat_idx))
            })?;
        }
        Ok(())
    }
}

/// Seeded 80/20 behavior split; both sides sorted ascending.
pub fn split_behaviors(n_behaviors: u64, master_seed: u64) -> DatasetSplit {
    let mut ids: Vec<u64> = (0..n_behaviors).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ SPLIT_TAG));
    ids.shuffle(&mut rng);
    let n_train = (n_behaviors as f64 * TRAIN_FRACTION).round() as usize;
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    DatasetSplit { train, test }
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub n_behaviors: u64,
    pub repeats: u32,
    pub noise_level: f64,
    pub master_seed: u64,
    pub overwrite: bool,
}

fn plan_records(spec: &ActionSpec, opts: &GenerateOptions) -> Vec<SampleRecord> {
    let mut records = Vec::with_capacity((opts.n_behaviors * opts.repeats as u64) as usize);
    for b in 0..opts.n_behaviors {
        let action = sample_action(spec, behavior_seed(opts.master_seed, b));
        for r in 0..opts.repeats {
            records.push(SampleRecord {
                behavior_id: b,
                repeat_idx: r,
                seed: record_seed(opts.master_seed, b, r as u64),
                action: action.clone(),
                audio_path: format!("audio/{b:05}_{r}.wav"),
            });
        }
    }
    records
}

/// Builds the manifest without rendering audio.
pub fn plan_manifest(task: TaskId, opts: &GenerateOptions) -> Result<DatasetManifest> {
    if opts.n_behaviors < 2 {
        return Err(Error::invalid("a dataset needs at least 2 behaviors"));
    }
    if opts.repeats < 1 {
        return Err(Error::invalid("a dataset needs at least 1 repeat per behavior"));
    }
    let spec = task.action_spec();
    Ok(DatasetManifest {
        task_id: task,
        schema_version: SCHEMA_VERSION,
        sample_rate: RAW_SAMPLE_RATE,
        channels: task.channels(),
        duration_s: CLIP_SECONDS as f64,
        noise_level: opts.noise_level,
        master_seed: opts.master_seed,
        records: plan_records(&spec, opts),
        action_spec: spec,
        split: split_behaviors(opts.n_behaviors, opts.master_seed),
    })
}

/// Renders every record to `out_dir/audio/*.wav` and writes `manifest.json` last.
pub fn generate_dataset(task: TaskId, opts: &GenerateOptions, out_dir: &Path) -> Result<DatasetManifest> {
    let manifest = plan_manifest(task, opts)?;
    let manifest_path = out_dir.join("manifest.json");
    if manifest_path.exists() && !opts.overwrite {
        return Err(Error::Dataset(format!(
            "{} already exists; pass overwrite to regenerate",
            manifest_path.display()
        )));
    }
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    for chunk in manifest.records.chunks(WRITE_CHUNK) {
        let clips: Vec<AudioClip> = chunk
            .par_iter()
            .map(|r| simulate(task, &r.action, r.seed, opts.noise_level))
            .collect::<Result<_>>()?;
        for (r, clip) in chunk.iter().zip(&clips) {
            write_wav(&out_dir.join(&r.audio_path), clip)?;
        }
    }
    write_json_atomic(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// Pretty JSON written through [`write_bytes_atomic`].
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes_atomic(path, &bytes)
}

/// Writes `path.tmp` then renames it over `path`.
pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A validated dataset on disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl LoadedDataset {
    pub fn task(&self) -> TaskId {
        self.manifest.task_id
    }

    pub fn train_records(&self) -> impl Iterator<Item = &SampleRecord> {
        self.manifest.records_for(&self.manifest.split.train)
    }

    pub fn test_records(&self) -> impl Iterator<Item = &SampleRecord> {
        self.manifest.records_for(&self.manifest.split.test)
    }

    pub fn load_clip(&self, record: &SampleRecord) -> Result<AudioClip> {
        read_wav(&self.root.join(&record.audio_path))
    }
}

/// Reads and validates a manifest, checking every audio header against it.
pub fn load_dataset(manifest_path: &Path) -> Result<LoadedDataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let expected_len = (manifest.duration_s * manifest.sample_rate as f64).round() as u32;
    for r in &manifest.records {
        let path = root.join(&r.audio_path);
        let reader = hound::WavReader::open(&path).map_err(|e| {
            Error::Dataset(format!(
                "record {}/{} ({}): {e}",
                r.behavior_id,
                r.repeat_idx,
                path.display()
            ))
        })?;
        let spec = reader.spec();
        if spec.channels as usize != manifest.channels
            || spec.sample_rate != manifest.sample_rate
            || reader.duration() != expected_len
        {
            return Err(Error::Dataset(format!(
                "record {}/{} ({}): expected {} ch × {expected_len} samples at {} Hz, \
                 found {} ch × {} samples at {} Hz",
                r.behavior_id,
                r.repeat_idx,
                path.display(),
                manifest.channels,
                manifest.sample_rate,
                spec.channels,
                reader.duration(),
                spec.sample_rate
            )));
        }
    }
    Ok(LoadedDataset { root, manifest })
}
