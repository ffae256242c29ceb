use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::AugmentationConfig;
use super::byol::{byol_loss, ema_update, make_view_pair, PretrainVariant, RepeatIndex};
use super::SpecSet;
use crate::dsp::ChannelStats;
use crate::error::{Error, Result};
use crate::nn::{EncoderConfig, EncoderState, Graph, Mode, OptimizerConfig, OptimizerState, ParamSet, Tensor, Var};
use crate::synth::splitmix64;

const SHUFFLE_TAG: u64 = 0x5348_5546;
const VIEW_TAG: u64 = 0x5649_4557;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub variant: PretrainVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub ema_tau: f64,
    /// Peak rate; decays along a half cosine to zero over all steps.
    pub optimizer: OptimizerConfig,
    pub augmentation: AugmentationConfig,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn desk(variant: PretrainVariant, seed: u64) -> Self {
        Self {
            variant,
            epochs: 100,
            batch_size: 128,
            ema_tau: 0.99,
            optimizer: OptimizerConfig::lars(0.2, 1.5e-6),
            augmentation: AugmentationConfig::default(),
            seed,
        }
    }

    pub fn paper(variant: PretrainVariant, seed: u64) -> Self {
        Self {
            epochs: 1000,
            batch_size: 1024,
            ..Self::desk(variant, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ema_tau) {
            return Err(Error::Config(format!("ema_tau must be in [0, 1), got {}", self.ema_tau)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.optimizer.lr)));
        }
        self.augmentation.validate()
    }
}

/// Mean loss per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub state: EncoderState,
    pub trace: Vec<EpochLoss>,
}

/// `lr · ½(1 + cos(π·step/total))`.
pub fn cosine_lr(peak: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return peak;
    }
    0.5 * peak * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

fn check_pool(set: &SpecSet, variant: PretrainVariant, channels: usize) -> Result<RepeatIndex> {
    if set.len() < 2 {
        return Err(Error::Dataset(format!("pretraining needs at least 2 clips, got {}", set.len())));
    }
    if set.channels != channels {
        return Err(Error::shape(
            "pretrain",
            format!("pool has {} channels, encoder expects {channels}", set.channels),
        ));
    }
    let index = RepeatIndex::new(set);
    if variant.pairs_repeats() && index.min_group_size() < 2 {
        return Err(Error::Dataset(format!(
            "{} pairs repeats of one behavior, but some behavior has a single recording",
            variant.as_str()
        )));
    }
    Ok(index)
}

/// Views for a batch. Each item has its own generator, so the result does not
/// depend on how the work is scheduled.
fn batch_views(
    set: &SpecSet,
    index: &RepeatIndex,
    items: &[usize],
    cfg: &PretrainConfig,
    epoch: usize,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let pairs: Vec<(Vec<f32>, Vec<f32>)> = items
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let s = splitmix64(cfg.seed ^ VIEW_TAG ^ splitmix64(((epoch as u64) << 32) ^ (k as u64) ^ ((i as u64) << 16)));
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            make_view_pair(set, index, i, cfg.variant, &cfg.augmentation, &mut rng)
        })
        .collect::<Result<_>>()?;
    let shape = vec![items.len(), set.channels, set.n_mels, set.n_frames];
    let mut a = Vec::with_capacity(items.len() * set.item_len());
    let mut b = Vec::with_capacity(items.len() * set.item_len());
    for (x, y) in pairs {
        a.extend(x);
        b.extend(y);
    }
    Ok((Tensor::new(shape.clone(), a)?, Tensor::new(shape, b)?))
}

fn target_projection(state: &EncoderState, target: &ParamSet<f32>, x: Tensor<f32>) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let b = target.bind(&mut g, false);
    let x = g.constant(x);
    let h = state.net.encoder.forward(&mut g, target, &b, x, Mode::Train)?;
    let z = state.net.projector.forward(&mut g, target, &b, h, Mode::Train)?;
    Ok(g.value(z).clone())
}

fn online_prediction(state: &EncoderState, g: &mut Graph<f32>, b: &crate::nn::Bound, x: Tensor<f32>) -> Result<Var> {
    let x = g.constant(x);
    let h = state.net.encoder.forward(g, &state.online, b, x, Mode::Train)?;
    let z = state.net.projector.forward(g, &state.online, b, h, Mode::Train)?;
    state.net.predictor.forward(g, &state.online, b, z, Mode::Train)
}

/// Symmetrized loss `½[ℓ(q₁, z₂) + ℓ(q₂, z₁)]` on one batch, recorded on `g`.
fn symmetric_loss(
    state: &EncoderState,
    target: &ParamSet<f32>,
    g: &mut Graph<f32>,
    b: &crate::nn::Bound,
    v1: Tensor<f32>,
    v2: Tensor<f32>,
) -> Result<Var> {
    let z1 = target_projection(state, target, v1.clone())?;
    let z2 = target_projection(state, target, v2.clone())?;
    let q1 = online_prediction(state, g, b, v1)?;
    let q2 = online_prediction(state, g, b, v2)?;
    let z1 = g.constant(z1);
    let z2 = g.constant(z2);
    let l12 = byol_loss(g, q1, z2)?;
    let l21 = byol_loss(g, q2, z1)?;
    let s = g.add(l12, l21)?;
    Ok(g.affine(s, 0.5, 0.0))
}

fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ SHUFFLE_TAG ^ epoch as u64));
    order.shuffle(&mut rng);
    order
        .chunks(batch_size.min(n))
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// BYOL pretraining on a pool of normalized spectrograms. `stats` is the
/// normalization the pool was built with and is stored in the encoder.
pub fn pretrain(
    pool: &SpecSet,
    encoder: &EncoderConfig,
    stats: ChannelStats,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let index = check_pool(pool, cfg.variant, encoder.in_channels)?;
    let mut state = EncoderState::new(encoder.clone(), stats, splitmix64(cfg.seed))?;
    let mut target = state.target.take().expect("fresh state has a target");
    let mut opt = OptimizerState::new(cfg.optimizer.clone());
    let steps_per_epoch = batches(pool.len(), cfg.batch_size, cfg.seed, 0).len();
    let total = steps_per_epoch * cfg.epochs;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut count = 0;
        for (bi, items) in batches(pool.len(), cfg.batch_size, cfg.seed, epoch).iter().enumerate() {
            let (v1, v2) = batch_views(pool, &index, items, cfg, epoch)?;
            let mut g = Graph::new();
            let b = state.online.bind(&mut g, true);
            let loss = symmetric_loss(&state, &target, &mut g, &b, v1, v2)?;
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "BYOL loss is {value} at epoch {epoch}, batch {bi} (step {step}, lr {:.3e})",
                    opt.config.lr
                )));
            }
            let grads = g.backward(loss)?;
            let grads = b.grads(&grads);
            opt.set_lr(cosine_lr(cfg.optimizer.lr, step, total));
            opt.step(&mut state.online, &grads)?;
            state.online.apply_bn_updates(&g.take_bn_updates());
            ema_update(&mut target, &state.online, cfg.ema_tau)?;
            sum += value;
            count += 1;
            step += 1;
        }
        let loss = sum / count.max(1) as f64;
        log::debug!("pretrain {} epoch {epoch}: loss {loss:.5}", cfg.variant.as_str());
        trace.push(EpochLoss { epoch, loss });
    }
    state.step = step as u64;
    state.target = Some(target);
    Ok(PretrainOutcome { state, trace })
}

/// Mean symmetrized loss of `state` on one pass over `pool`, without updates.
/// Pairs are drawn exactly as in epoch `epoch` of a run with `cfg`.
pub fn evaluate_byol_loss(state: &EncoderState, pool: &SpecSet, cfg: &PretrainConfig, epoch: usize) -> Result<f64> {
    let index = check_pool(pool, cfg.variant, state.in_channels())?;
    let target = match &state.target {
        Some(t) => t.clone(),
        None => state.online.prefix(state.net.target_len()),
    };
    let mut sum = 0.0;
    let mut count = 0;
    for items in batches(pool.len(), cfg.batch_size, cfg.seed, epoch) {
        let (v1, v2) = batch_views(pool, &index, &items, cfg, epoch)?;
        let mut g = Graph::new();
        let b = state.online.bind(&mut g, false);
        let loss = symmetric_loss(state, &target, &mut g, &b, v1, v2)?;
        sum += g.value(loss).item() as f64;
        count += 1;
    }
    Ok(sum / count.max(1) as f64)
}

pub fn write_loss_trace(path: &Path, trace: &[EpochLoss]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch,loss").unwrap();
    for e in trace {
        writeln!(out, "{},{}", e.epoch, e.loss).unwrap();
    }
    crate::synth::write_bytes_atomic(path, &out)
}
