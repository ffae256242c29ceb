use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::ChannelStats;
use crate::error::{Error, Result};
use crate::nn::{
    Bound, Checkpoint, Encoder, EncoderConfig, Graph, LinearLayer, Mode, OptimizerConfig, OptimizerState, ParamSet,
    Tensor, Var,
};
use crate::ssl::{resize_crop_into, AugmentationConfig, CropParams, SpecSet};
use crate::synth::splitmix64;

pub const SUPERVISED_MODEL_KIND: &str = "supervised";

const INFER_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Random resize-crop on every batch input when set.
    pub augmentation: Option<AugmentationConfig>,
    pub seed: u64,
}

impl SupervisedConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            optimizer: OptimizerConfig::adam(1e-4, 1e-4),
            augmentation: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("supervised epochs and batch_size must be positive".into()));
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }
}

/// Encoder plus a linear head, trained end to end.
#[derive(Debug, Clone)]
pub struct SupervisedNet {
    pub config: EncoderConfig,
    pub action_dim: usize,
    pub encoder: Encoder,
    pub head: LinearLayer,
    pub params: ParamSet<f32>,
    pub stats: ChannelStats,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: EncoderConfig,
    action_dim: usize,
    stats: ChannelStats,
}

impl SupervisedNet {
    pub fn new(config: EncoderConfig, action_dim: usize, stats: ChannelStats, seed: u64) -> Result<Self> {
        config.validate()?;
        if stats.channels() != config.in_channels {
            return Err(Error::shape(
                "SupervisedNet",
                format!("channel stats cover {} channels, in_channels is {}", stats.channels(), config.in_channels),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Encoder::build(&mut params, "encoder", &config, &mut rng);
        let head = LinearLayer::build(&mut params, "head", config.repr_dim, action_dim, true, &mut rng);
        Ok(Self {
            config,
            action_dim,
            encoder,
            head,
            params,
            stats,
        })
    }

    fn forward(&self, g: &mut Graph<f32>, b: &Bound, x: Tensor<f32>, mode: Mode) -> Result<Var> {
        let x = g.constant(x);
        let h = self.encoder.forward(g, &self.params, b, x, mode)?;
        self.head.forward(g, b, h)
    }

    /// Eval-mode outputs in normalized action space for `[N, C, mels, frames]`.
    pub fn predict_normalized(&self, inputs: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let shape = inputs.shape().to_vec();
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(Error::shape(
                "supervised",
                format!("input {shape:?} does not match in_channels {}", self.config.in_channels),
            ));
        }
        let per = shape[1] * shape[2] * shape[3];
        let mut out = Vec::with_capacity(shape[0]);
        for start in (0..shape[0]).step_by(INFER_CHUNK) {
            let n = INFER_CHUNK.min(shape[0] - start);
            let chunk = Tensor::new(
                vec![n, shape[1], shape[2], shape[3]],
                inputs.data()[start * per..(start + n) * per].to_vec(),
            )?;
            let mut g = Graph::new();
            let b = self.params.bind(&mut g, false);
            let y = self.forward(&mut g, &b, chunk, Mode::Eval)?;
            let v = g.value(y);
            out.extend((0..n).map(|k| v.row(k).iter().map(|&x| x as f64).collect()));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::to_value(Meta {
            config: self.config.clone(),
            action_dim: self.action_dim,
            stats: self.stats.clone(),
        })?;
        let mut c = Checkpoint::new(SUPERVISED_MODEL_KIND, meta);
        for (name, _, t) in self.params.iter() {
            c.insert(name, t.clone());
        }
        Ok(c)
    }

    pub fn from_checkpoint(mut c: Checkpoint) -> Result<Self> {
        if c.model_kind != SUPERVISED_MODEL_KIND {
            return Err(Error::Checkpoint(format!(
                "expected model kind {SUPERVISED_MODEL_KIND}, found {}",
                c.model_kind
            )));
        }
        let meta: Meta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("bad supervised metadata: {e}")))?;
        let mut net = Self::new(meta.config, meta.action_dim, meta.stats, 0)?;
        for i in 0..net.params.len() {
            let name = net.params.name(i).to_string();
            let t = c.take(&name)?;
            if t.shape() != net.params.get(i).shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), net.params.get(i).shape()),
                ));
            }
            *net.params.get_mut(i) = t;
        }
        if let Some(extra) = c.tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct SupervisedOutcome {
    pub net: SupervisedNet,
    /// Mean batch loss per epoch.
    pub trace: Vec<f64>,
}

fn batch_inputs(set: &SpecSet, items: &[usize], aug: Option<&AugmentationConfig>, seed: u64) -> Result<Tensor<f32>> {
    let Some(aug) = aug else {
        return Ok(set.gather(items));
    };
    let n = set.item_len();
    let views: Vec<Vec<f32>> = items
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ ((k as u64) << 20) ^ i as u64));
            let mut out = vec![0.0; n];
            let p = CropParams::sample(aug, &mut rng);
            resize_crop_into(set.item(i), set.channels, set.n_mels, set.n_frames, p, &mut out);
            out
        })
        .collect();
    Tensor::new(vec![items.len(), set.channels, set.n_mels, set.n_frames], views.concat())
}

/// End-to-end regression from normalized spectrograms to normalized actions.
pub fn train_supervised(
    train: &SpecSet,
    targets: &[Vec<f64>],
    encoder: &EncoderConfig,
    stats: ChannelStats,
    cfg: &SupervisedConfig,
) -> Result<SupervisedOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("cannot train a supervised model on an empty split".into()));
    }
    if targets.len() != train.len() {
        return Err(Error::shape(
            "train_supervised",
            format!("{} inputs but {} targets", train.len(), targets.len()),
        ));
    }
    let d = targets[0].len();
    let mut net = SupervisedNet::new(encoder.clone(), d, stats, splitmix64(cfg.seed))?;
    if train.channels != encoder.in_channels {
        return Err(Error::shape(
            "train_supervised",
            format!("inputs have {} channels, encoder expects {}", train.channels, encoder.in_channels),
        ));
    }
    // Head starts at the mean target.
    if let Some(bi) = net.head.bias {
        let mean: Vec<f32> = (0..d)
            .map(|c| (targets.iter().map(|t| t[c]).sum::<f64>() / targets.len() as f64) as f32)
            .collect();
        net.params.get_mut(bi).data_mut().copy_from_slice(&mean);
    }
    let mut opt = OptimizerState::new(cfg.optimizer.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x5355_5045));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = cfg.batch_size.min(train.len());
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for (bi, items) in order.chunks(batch).enumerate() {
            let seed = splitmix64(cfg.seed ^ ((epoch as u64) << 32) ^ bi as u64);
            let x = batch_inputs(train, items, cfg.augmentation.as_ref(), seed)?;
            let a: Vec<f32> = items.iter().flat_map(|&i| targets[i].iter().map(|&v| v as f32)).collect();
            let a = Tensor::new(vec![items.len(), d], a)?;
            let mut g = Graph::new();
            let b = net.params.bind(&mut g, true);
            let y = net.forward(&mut g, &b, x, Mode::Train)?;
            let a = g.constant(a);
            let e = g.sub(y, a)?;
            let e2 = g.square(e);
            let s = g.sum(e2);
            let loss = g.affine(s, 1.0 / items.len() as f64, 0.0);
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("supervised loss at epoch {epoch}, batch {bi}")));
            }
            let grads = g.backward(loss)?;
            opt.step(&mut net.params, &b.grads(&grads))?;
            net.params.apply_bn_updates(&g.take_bn_updates());
            sum += value;
            count += 1;
        }
        trace.push(sum / count.max(1) as f64);
    }
    Ok(SupervisedOutcome { net, trace })
}
