use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::graph::Mode;
use super::layers::{ByolNet, EncoderConfig};
use super::params::ParamSet;
use super::{Graph, Tensor};
use crate::dsp::ChannelStats;
use crate::error::{Error, Result};

pub const ENCODER_MODEL_KIND: &str = "encoder";

/// Rows per forward pass when mapping a dataset to representations.
const INFER_CHUNK: usize = 64;

/// Online network (encoder, projector, predictor), optional EMA target of the
/// encoder and projector, and the input normalization it was trained with.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub net: ByolNet,
    pub online: ParamSet<f32>,
    pub target: Option<ParamSet<f32>>,
    pub stats: ChannelStats,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: EncoderConfig,
    stats: ChannelStats,
    step: u64,
}

impl EncoderState {
    /// Freshly initialised online network with the target set to a copy.
    pub fn new(config: EncoderConfig, stats: ChannelStats, seed: u64) -> Result<Self> {
        config.validate()?;
        if stats.channels() != config.in_channels {
            return Err(Error::shape(
                "EncoderState",
                format!(
                    "channel stats cover {} channels but in_channels is {}",
                    stats.channels(),
                    config.in_channels
                ),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, online) = ByolNet::build::<f32, _>(&config, &mut rng);
        let target = Some(online.prefix(net.target_len()));
        Ok(Self {
            config,
            net,
            online,
            target,
            stats,
            step: 0,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.config.in_channels
    }

    pub fn expect_channels(&self, channels: usize) -> Result<()> {
        if channels != self.config.in_channels {
            return Err(Error::shape(
                "encoder",
                format!(
                    "model has in_channels {} but the task has {channels} channels",
                    self.config.in_channels
                ),
            ));
        }
        Ok(())
    }

    /// Eval-mode representations of normalized inputs `[N, C, mels, frames]`.
    pub fn represent(&self, inputs: &Tensor<f32>) -> Result<Tensor<f32>> {
        let shape = inputs.shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::shape("represent", format!("expected [N, C, H, W], got {shape:?}")));
        }
        self.expect_channels(shape[1])?;
        let per = shape[1] * shape[2] * shape[3];
        let mut out = Vec::with_capacity(shape[0] * self.config.repr_dim);
        for start in (0..shape[0]).step_by(INFER_CHUNK) {
            let n = INFER_CHUNK.min(shape[0] - start);
            let chunk = Tensor::new(
                vec![n, shape[1], shape[2], shape[3]],
                inputs.data()[start * per..(start + n) * per].to_vec(),
            )?;
            let mut g = Graph::new();
            let b = self.online.bind(&mut g, false);
            let x = g.constant(chunk);
            let z = self.net.encoder.forward(&mut g, &self.online, &b, x, Mode::Eval)?;
            out.extend_from_slice(g.value(z).data());
        }
        Tensor::new(vec![shape[0], self.config.repr_dim], out)
    }

    /// Online parameters only; the target is dropped.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::to_value(Meta {
            config: self.config.clone(),
            stats: self.stats.clone(),
            step: self.step,
        })?;
        let mut c = Checkpoint::new(ENCODER_MODEL_KIND, meta);
        for (name, _, t) in self.online.iter() {
            c.insert(name, t.clone());
        }
        Ok(c)
    }

    pub fn from_checkpoint(mut c: Checkpoint) -> Result<Self> {
        if c.model_kind != ENCODER_MODEL_KIND {
            return Err(Error::Checkpoint(format!(
                "expected model kind {ENCODER_MODEL_KIND}, found {}",
                c.model_kind
            )));
        }
        let meta: Meta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("bad encoder metadata: {e}")))?;
        let mut state = Self::new(meta.config, meta.stats, 0)?;
        for i in 0..state.online.len() {
            let name = state.online.name(i).to_string();
            let t = c.take(&name)?;
            if t.shape() != state.online.get(i).shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!(
                        "tensor {name} has shape {:?}, config implies {:?}",
                        t.shape(),
                        state.online.get(i).shape()
                    ),
                ));
            }
            *state.online.get_mut(i) = t;
        }
        if let Some(extra) = c.tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        state.step = meta.step;
        state.target = None;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}
