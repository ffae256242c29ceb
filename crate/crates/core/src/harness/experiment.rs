use super::config::{Method, RunConfig};
use super::data::{group_key, PreparedDataset};
use crate::dsp::{apply_normalization, fit_channel_stats, MelSpectrogram};
use crate::error::{Error, Result};
use crate::models::{
    fit_probe, oracle_baseline, random_baseline, train_supervised, PolicyModel, ProbeFit,
};
use crate::nn::EncoderState;
use crate::ssl::{pretrain, EpochLoss, PretrainOutcome, SpecSet};

/// Channels of the shared encoder trained on every task at once.
pub const POOLED_CHANNELS: usize = 2;

/// A trained policy plus the traces produced on the way.
#[derive(Debug, Clone)]
pub struct MethodFit {
    pub model: PolicyModel,
    pub pretrain_trace: Vec<EpochLoss>,
    /// Mean batch loss per epoch of the supervised net, or the probe's loss trace.
    pub train_trace: Vec<f64>,
}

/// Pretrains the encoder of a probe-based method on `train` records of one task.
pub fn pretrain_encoder(
    ds: &PreparedDataset,
    train: &[usize],
    method: Method,
    cfg: &RunConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    if method == Method::AurlAll {
        return pretrain_pooled(&[(ds, train)], cfg, seed);
    }
    let pcfg = cfg
        .pretrain_for(method, seed)
        .ok_or_else(|| Error::invalid(format!("{method} has no pretraining stage")))?;
    let channels = ds.manifest.channels;
    let stats = ds.stats_for(train, channels)?;
    let set = ds.spec_set(train, &stats, channels)?;
    pretrain(&set, &cfg.encoder_for(channels), stats, &pcfg)
}

/// One two-channel encoder over the training records of several tasks.
pub fn pretrain_pooled(parts: &[(&PreparedDataset, &[usize])], cfg: &RunConfig, seed: u64) -> Result<PretrainOutcome> {
    let pcfg = cfg.pretrain_for(Method::AurlAll, seed).expect("aurl_all pretrains");
    let wide: Vec<MelSpectrogram> = parts
        .iter()
        .flat_map(|(ds, recs)| recs.iter().map(move |&i| ds.specs[i].widen(POOLED_CHANNELS)))
        .collect::<Result<_>>()?;
    let stats = fit_channel_stats(wide.iter())?;
    let first = wide.first().ok_or_else(|| Error::Dataset("empty pretraining pool".into()))?;
    let mut set = SpecSet::new(POOLED_CHANNELS, first.n_mels, first.n_frames);
    let mut k = 0;
    for (ds, recs) in parts {
        for &i in *recs {
            let r = &ds.manifest.records[i];
            set.push(&apply_normalization(&wide[k], &stats)?, group_key(ds.task(), r.behavior_id), r.repeat_idx)?;
            k += 1;
        }
    }
    pretrain(&set, &cfg.encoder_for(POOLED_CHANNELS), stats, &pcfg)
}

/// Linear probe on a frozen encoder, fit to the normalized actions of `train`.
pub fn fit_probe_policy(
    ds: &PreparedDataset,
    train: &[usize],
    encoder: EncoderState,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(PolicyModel, ProbeFit)> {
    let normalizer = ds.normalizer(train)?;
    let set = ds.spec_set(train, &encoder.stats, encoder.in_channels())?;
    let reps = encoder.represent(&set.all())?;
    let targets: Vec<Vec<f64>> = ds.actions(train).iter().map(|a| normalizer.normalize(a)).collect();
    let (weights, fit) = fit_probe(&reps, &targets, &cfg.probe_for(seed))?;
    Ok((PolicyModel::probe(ds.task(), normalizer, encoder, weights), fit))
}

/// Supervised, random or oracle policy on `train`.
pub fn fit_direct(ds: &PreparedDataset, train: &[usize], method: Method, cfg: &RunConfig, seed: u64) -> Result<MethodFit> {
    let normalizer = ds.normalizer(train)?;
    let (model, train_trace) = match method {
        Method::Supervised | Method::SupervisedAug => {
            let channels = ds.manifest.channels;
            let stats = ds.stats_for(train, channels)?;
            let set = ds.spec_set(train, &stats, channels)?;
            let targets: Vec<Vec<f64>> = ds.actions(train).iter().map(|a| normalizer.normalize(a)).collect();
            let out = train_supervised(
                &set,
                &targets,
                &cfg.encoder_for(channels),
                stats,
                &cfg.supervised_for(method, seed),
            )?;
            let model = PolicyModel::supervised(ds.task(), normalizer, out.net, method == Method::SupervisedAug);
            (model, out.trace)
        }
        Method::Random => (random_baseline(ds.task(), normalizer, &ds.behavior_actions(train), seed)?, Vec::new()),
        Method::Oracle => (oracle_baseline(ds.task(), normalizer, &ds.behavior_actions(train))?, Vec::new()),
        _ => return Err(Error::invalid(format!("{method} needs a pretrained encoder"))),
    };
    Ok(MethodFit {
        model,
        pretrain_trace: Vec::new(),
        train_trace,
    })
}

/// Trains `method` end to end on `train` records of one task.
pub fn fit_method(ds: &PreparedDataset, train: &[usize], method: Method, cfg: &RunConfig, seed: u64) -> Result<MethodFit> {
    if method.pretraining().is_none() {
        return fit_direct(ds, train, method, cfg, seed);
    }
    let out = pretrain_encoder(ds, train, method, cfg, seed)?;
    let (model, fit) = fit_probe_policy(ds, train, out.state, cfg, seed)?;
    Ok(MethodFit {
        model,
        pretrain_trace: out.trace,
        train_trace: fit.trace,
    })
}
