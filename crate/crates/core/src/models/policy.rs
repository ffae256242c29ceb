use std::path::Path;

use serde::{Deserialize, Serialize};

use super::normalizer::ActionNormalizer;
use super::probe::{ProbeWeights, PROBE_MODEL_KIND};
use super::supervised::{SupervisedNet, SUPERVISED_MODEL_KIND};
use crate::dsp::{apply_normalization, condition, mel_spectrogram, AudioClip, ChannelStats, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, EncoderState, Tensor};
use crate::synth::{splitmix64, ActionParams, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Probe,
    Supervised,
    SupervisedAug,
    Random,
    Oracle,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Probe => "probe",
            Self::Supervised => "supervised",
            Self::SupervisedAug => "supervised_aug",
            Self::Random => "random",
            Self::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Policy {
    /// Frozen encoder and a linear probe.
    Probe { encoder: EncoderState, probe: ProbeWeights },
    Supervised { net: SupervisedNet },
    /// Uniform draw over the training actions, keyed by query index.
    Random { actions: Vec<ActionParams>, seed: u64 },
    /// Nearest training action to the true test action.
    Oracle { actions: Vec<(u64, ActionParams)> },
}

#[derive(Debug, Clone)]
pub struct PolicyModel {
    pub kind: PolicyKind,
    pub task: TaskId,
    pub normalizer: ActionNormalizer,
    pub policy: Policy,
}

/// Raw mel spectrogram of a clip at either the recording or pipeline rate.
pub fn clip_spectrogram(clip: &AudioClip) -> Result<MelSpectrogram> {
    mel_spectrogram(&condition(clip)?)
}

/// Training actions one per behavior, ordered by behavior id.
pub fn behavior_actions<'a, I>(records: I) -> Vec<(u64, ActionParams)>
where
    I: IntoIterator<Item = (u64, &'a ActionParams)>,
{
    let mut out = std::collections::BTreeMap::new();
    for (id, a) in records {
        out.entry(id).or_insert_with(|| a.clone());
    }
    out.into_iter().collect()
}

pub fn random_baseline(
    task: TaskId,
    normalizer: ActionNormalizer,
    train: &[(u64, ActionParams)],
    seed: u64,
) -> Result<PolicyModel> {
    if train.is_empty() {
        return Err(Error::Dataset("random baseline needs training actions".into()));
    }
    Ok(PolicyModel {
        kind: PolicyKind::Random,
        task,
        normalizer,
        policy: Policy::Random {
            actions: train.iter().map(|(_, a)| a.clone()).collect(),
            seed,
        },
    })
}

pub fn oracle_baseline(task: TaskId, normalizer: ActionNormalizer, train: &[(u64, ActionParams)]) -> Result<PolicyModel> {
    if train.is_empty() {
        return Err(Error::Dataset("oracle baseline needs training actions".into()));
    }
    let mut actions = train.to_vec();
    actions.sort_by_key(|(b, _)| *b);
    Ok(PolicyModel {
        kind: PolicyKind::Oracle,
        task,
        normalizer,
        policy: Policy::Oracle { actions },
    })
}

/// Nearest action in L2; ties go to the lowest behavior id.
pub fn nearest_action<'a>(actions: &'a [(u64, ActionParams)], target: &ActionParams) -> &'a ActionParams {
    let mut best: Option<(f64, u64, &ActionParams)> = None;
    for (id, a) in actions {
        let d = a.squared_distance(target);
        let better = match best {
            None => true,
            Some((bd, bid, _)) => d < bd || (d == bd && *id < bid),
        };
        if better {
            best = Some((d, *id, a));
        }
    }
    best.expect("non-empty action set").2
}

pub fn random_choice(actions: &[ActionParams], seed: u64, index: u64) -> &ActionParams {
    let k = splitmix64(seed ^ splitmix64(index)) % actions.len() as u64;
    &actions[k as usize]
}

fn normalized_inputs(specs: &[MelSpectrogram], stats: &ChannelStats, channels: usize) -> Result<Tensor<f32>> {
    let first = specs.first().ok_or_else(|| Error::invalid("no inputs to predict"))?;
    let mut data = Vec::with_capacity(specs.len() * channels * first.n_mels * first.n_frames);
    for s in specs {
        if s.shape() != first.shape() {
            return Err(Error::shape("predict", format!("{:?} vs {:?}", s.shape(), first.shape())));
        }
        let wide = s.widen(channels)?;
        data.extend(apply_normalization(&wide, stats)?.values);
    }
    Tensor::new(vec![specs.len(), channels, first.n_mels, first.n_frames], data)
}

impl PolicyModel {
    pub fn probe(task: TaskId, normalizer: ActionNormalizer, encoder: EncoderState, probe: ProbeWeights) -> Self {
        Self {
            kind: PolicyKind::Probe,
            task,
            normalizer,
            policy: Policy::Probe { encoder, probe },
        }
    }

    pub fn supervised(task: TaskId, normalizer: ActionNormalizer, net: SupervisedNet, augmented: bool) -> Self {
        Self {
            kind: if augmented {
                PolicyKind::SupervisedAug
            } else {
                PolicyKind::Supervised
            },
            task,
            normalizer,
            policy: Policy::Supervised { net },
        }
    }

    fn check_channels(&self, specs: &[MelSpectrogram]) -> Result<()> {
        let want = self.task.channels();
        if let Some(s) = specs.iter().find(|s| s.channels != want) {
            return Err(Error::shape(
                "predict",
                format!("{} model expects {want}-channel audio, got {} channels", self.task, s.channels),
            ));
        }
        Ok(())
    }

    /// Actions for raw spectrograms; query `i` has index `i`. `truths` is
    /// required by the oracle and ignored otherwise.
    pub fn predict_specs(&self, specs: &[MelSpectrogram], truths: Option<&[ActionParams]>) -> Result<Vec<ActionParams>> {
        self.check_channels(specs)?;
        match &self.policy {
            Policy::Probe { encoder, probe } => {
                let x = normalized_inputs(specs, &encoder.stats, encoder.in_channels())?;
                let z = encoder.represent(&x)?;
                Ok((0..specs.len())
                    .map(|k| self.normalizer.denormalize(&probe.apply(z.row(k))))
                    .collect())
            }
            Policy::Supervised { net } => {
                let x = normalized_inputs(specs, &net.stats, net.config.in_channels)?;
                Ok(net
                    .predict_normalized(&x)?
                    .iter()
                    .map(|y| self.normalizer.denormalize(y))
                    .collect())
            }
            Policy::Random { actions, seed } => Ok((0..specs.len())
                .map(|i| random_choice(actions, *seed, i as u64).clone())
                .collect()),
            Policy::Oracle { actions } => {
                let truths = truths.ok_or_else(|| Error::invalid("the oracle needs the true test actions"))?;
                if truths.len() != specs.len() {
                    return Err(Error::shape("predict", format!("{} truths for {} inputs", truths.len(), specs.len())));
                }
                Ok(truths.iter().map(|t| nearest_action(actions, t).clone()).collect())
            }
        }
    }

    /// Action for one clip, as query index 0.
    pub fn predict(&self, clip: &AudioClip) -> Result<ActionParams> {
        let spec = clip_spectrogram(clip)?;
        Ok(self.predict_specs(std::slice::from_ref(&spec), None)?.remove(0))
    }

    pub fn predict_with_truth(&self, clip: &AudioClip, truth: &ActionParams) -> Result<ActionParams> {
        let spec = clip_spectrogram(clip)?;
        Ok(self
            .predict_specs(std::slice::from_ref(&spec), Some(std::slice::from_ref(truth)))?
            .remove(0))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = serde_json::json!({
            "policy": self.kind,
            "task": self.task,
            "normalizer": self.normalizer,
        });
        let (kind, tensors) = match &self.policy {
            Policy::Probe { encoder, probe } => {
                let enc = encoder.to_checkpoint()?;
                meta["encoder"] = enc.meta;
                let mut c = probe.to_checkpoint(serde_json::Value::Null)?;
                c.tensors.extend(enc.tensors);
                (PROBE_MODEL_KIND, c.tensors)
            }
            Policy::Supervised { net } => {
                let c = net.to_checkpoint()?;
                meta["net"] = c.meta;
                (SUPERVISED_MODEL_KIND, c.tensors)
            }
            Policy::Random { actions, seed } => {
                meta["actions"] = serde_json::to_value(actions)?;
                meta["seed"] = serde_json::to_value(seed)?;
                ("random", Default::default())
            }
            Policy::Oracle { actions } => {
                meta["actions"] = serde_json::to_value(actions)?;
                ("oracle", Default::default())
            }
        };
        let mut c = Checkpoint::new(kind, meta);
        c.tensors = tensors;
        Ok(c)
    }

    pub fn from_checkpoint(mut c: Checkpoint) -> Result<Self> {
        let field = |name: &str| {
            c.meta
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("policy metadata lacks `{name}`")))
        };
        let kind: PolicyKind = serde_json::from_value(field("policy")?)?;
        let task: TaskId = serde_json::from_value(field("task")?)?;
        let normalizer: ActionNormalizer = serde_json::from_value(field("normalizer")?)?;
        let policy = match (kind, c.model_kind.as_str()) {
            (PolicyKind::Probe, PROBE_MODEL_KIND) => {
                let enc_meta = field("encoder")?;
                let mut probe_part = Checkpoint::new(PROBE_MODEL_KIND, serde_json::Value::Null);
                probe_part.insert("probe.weight", c.take("probe.weight")?);
                probe_part.insert("probe.bias", c.take("probe.bias")?);
                let probe = ProbeWeights::from_checkpoint(&mut probe_part)?;
                let mut enc = Checkpoint::new(crate::nn::state::ENCODER_MODEL_KIND, enc_meta);
                enc.tensors = std::mem::take(&mut c.tensors);
                let encoder = EncoderState::from_checkpoint(enc)?;
                if probe.repr_dim != encoder.config.repr_dim {
                    return Err(Error::Checkpoint("probe and encoder widths differ".into()));
                }
                Policy::Probe { encoder, probe }
            }
            (PolicyKind::Supervised | PolicyKind::SupervisedAug, SUPERVISED_MODEL_KIND) => {
                let mut inner = Checkpoint::new(SUPERVISED_MODEL_KIND, field("net")?);
                inner.tensors = std::mem::take(&mut c.tensors);
                Policy::Supervised {
                    net: SupervisedNet::from_checkpoint(inner)?,
                }
            }
            (PolicyKind::Random, "random") => Policy::Random {
                actions: serde_json::from_value(field("actions")?)?,
                seed: serde_json::from_value(field("seed")?)?,
            },
            (PolicyKind::Oracle, "oracle") => Policy::Oracle {
                actions: serde_json::from_value(field("actions")?)?,
            },
            (k, m) => {
                return Err(Error::Checkpoint(format!(
                    "policy {} stored under model kind {m}",
                    k.as_str()
                )))
            }
        };
        Ok(Self {
            kind,
            task,
            normalizer,
            policy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(values: &[(u64, f64)]) -> Vec<(u64, ActionParams)> {
        values.iter().map(|&(b, v)| (b, ActionParams::new(vec![v]))).collect()
    }

    #[test]
    fn oracle_picks_nearest_with_lowest_id_on_ties() {
        let train = one_d(&[(4, 1.0), (9, 5.0)]);
        assert_eq!(nearest_action(&train, &ActionParams::new(vec![2.0])).values, vec![1.0]);
        let tied = one_d(&[(7, 1.0), (3, 3.0)]);
        assert_eq!(nearest_action(&tied, &ActionParams::new(vec![2.0])).values, vec![3.0]);
    }

    #[test]
    fn singleton_train_set_fixes_both_baselines() {
        let train = one_d(&[(0, 1.5)]);
        let actions: Vec<ActionParams> = train.iter().map(|t| t.1.clone()).collect();
        for i in 0..10 {
            assert_eq!(random_choice(&actions, 3, i).values, vec![1.5]);
        }
        assert_eq!(nearest_action(&train, &ActionParams::new(vec![-9.0])).values, vec![1.5]);
    }

    #[test]
    fn random_choice_is_roughly_uniform() {
        let actions: Vec<ActionParams> = (0..4).map(|v| ActionParams::new(vec![v as f64])).collect();
        let mut counts = [0usize; 4];
        for i in 0..4000 {
            counts[random_choice(&actions, 11, i).values[0] as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (850..1150).contains(&c)), "{counts:?}");
    }

    #[test]
    fn behavior_actions_dedupes_and_sorts() {
        let a = ActionParams::new(vec![1.0]);
        let b = ActionParams::new(vec![2.0]);
        let out = behavior_actions([(5, &b), (2, &a), (5, &b), (2, &a)]);
        assert_eq!(out, vec![(2, a), (5, b)]);
    }
}
