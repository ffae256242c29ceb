use std::path::Path;

use rayon::prelude::*;

use crate::dsp::{
    amplitude_envelope, apply_normalization, condition, fit_channel_stats, mel_spectrogram, wav::read_wav, ChannelStats,
    Envelope, MelSpectrogram, ENVELOPE_FRAME,
};
use crate::error::{Error, Result};
use crate::models::{behavior_actions, ActionNormalizer};
use crate::ssl::SpecSet;
use crate::synth::{simulate, ActionParams, DatasetManifest, TaskId};

/// Front-end outputs for every record of one dataset.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub manifest: DatasetManifest,
    /// Raw mel spectrograms, one per manifest record.
    pub specs: Vec<MelSpectrogram>,
    /// Envelopes of conditioned audio for test records, `None` elsewhere.
    pub envelopes: Vec<Option<Envelope>>,
    /// Record indices, in manifest order.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Per-channel statistics of the training spectrograms.
    pub stats: ChannelStats,
}

/// Spectrogram and (optionally) envelope of one clip after conditioning.
pub fn front_end(clip: &crate::dsp::AudioClip, with_envelope: bool) -> Result<(MelSpectrogram, Option<Envelope>)> {
    let c = condition(clip)?;
    let spec = mel_spectrogram(&c)?;
    let env = if with_envelope {
        Some(amplitude_envelope(&c, ENVELOPE_FRAME)?)
    } else {
        None
    };
    Ok((spec, env))
}

impl PreparedDataset {
    /// Renders audio with the simulator (`root = None`) or reads the WAV files
    /// under `root`. Both give identical samples.
    pub fn build(manifest: DatasetManifest, root: Option<&Path>) -> Result<Self> {
        manifest.validate()?;
        let test_ids: std::collections::HashSet<u64> = manifest.split.test.iter().copied().collect();
        let outputs: Vec<(MelSpectrogram, Option<Envelope>)> = manifest
            .records
            .par_iter()
            .map(|r| {
                let clip = match root {
                    Some(dir) => read_wav(&dir.join(&r.audio_path))?,
                    None => simulate(manifest.task_id, &r.action, r.seed, manifest.noise_level)?,
                };
                front_end(&clip, test_ids.contains(&r.behavior_id))
            })
            .collect::<Result<_>>()?;
        let (specs, envelopes): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, r) in manifest.records.iter().enumerate() {
            if test_ids.contains(&r.behavior_id) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Dataset("both splits must be non-empty".into()));
        }
        let stats = fit_channel_stats(train.iter().map(|&i| &specs[i]))?;
        Ok(Self {
            manifest,
            specs,
            envelopes,
            train,
            test,
            stats,
        })
    }

    pub fn task(&self) -> TaskId {
        self.manifest.task_id
    }

    pub fn action(&self, record: usize) -> &ActionParams {
        &self.manifest.records[record].action
    }

    pub fn actions(&self, records: &[usize]) -> Vec<ActionParams> {
        records.iter().map(|&i| self.action(i).clone()).collect()
    }

    /// Training records whose behavior is among the first `n` training behaviors.
    pub fn train_slice(&self, n_behaviors: usize) -> Result<Vec<usize>> {
        let train = &self.manifest.split.train;
        if n_behaviors == 0 || n_behaviors > train.len() {
            return Err(Error::Config(format!(
                "slice of {n_behaviors} behaviors requested, the training split has {}",
                train.len()
            )));
        }
        let keep: std::collections::HashSet<u64> = train[..n_behaviors].iter().copied().collect();
        Ok(self
            .train
            .iter()
            .copied()
            .filter(|&i| keep.contains(&self.manifest.records[i].behavior_id))
            .collect())
    }

    /// One action per behavior among `records`.
    pub fn behavior_actions(&self, records: &[usize]) -> Vec<(u64, ActionParams)> {
        behavior_actions(records.iter().map(|&i| {
            let r = &self.manifest.records[i];
            (r.behavior_id, &r.action)
        }))
    }

    pub fn normalizer(&self, records: &[usize]) -> Result<ActionNormalizer> {
        ActionNormalizer::fit(&self.actions(records), &self.manifest.action_spec)
    }

    /// Spectrograms of `records`, widened to `channels` and normalized by `stats`.
    pub fn spec_set(&self, records: &[usize], stats: &ChannelStats, channels: usize) -> Result<SpecSet> {
        let first = &self.specs[records.first().copied().unwrap_or(0)];
        let mut set = SpecSet::new(channels, first.n_mels, first.n_frames);
        for &i in records {
            let r = &self.manifest.records[i];
            let s = apply_normalization(&self.specs[i].widen(channels)?, stats)?;
            set.push(&s, group_key(self.task(), r.behavior_id), r.repeat_idx)?;
        }
        Ok(set)
    }

    /// Channel statistics of `records` widened to `channels`.
    pub fn stats_for(&self, records: &[usize], channels: usize) -> Result<ChannelStats> {
        if channels == self.manifest.channels && records == self.train.as_slice() {
            return Ok(self.stats.clone());
        }
        let wide: Vec<MelSpectrogram> = records.iter().map(|&i| self.specs[i].widen(channels)).collect::<Result<_>>()?;
        fit_channel_stats(wide.iter())
    }

    pub fn raw_specs(&self, records: &[usize]) -> Vec<MelSpectrogram> {
        records.iter().map(|&i| self.specs[i].clone()).collect()
    }
}

/// Repeat-group key, unique across tasks so pooled sets keep behaviors apart.
pub fn group_key(task: TaskId, behavior_id: u64) -> u64 {
    let t = TaskId::ALL.iter().position(|&x| x == task).unwrap() as u64;
    (t << 48) | behavior_id
}
