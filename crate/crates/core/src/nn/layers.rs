use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::graph::Mode;
use super::params::{Bound, ParamKind, ParamSet};
use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Shape of the convolutional encoder and the BYOL heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub block_widths: Vec<usize>,
    pub repr_dim: usize,
    pub proj_dim: usize,
    pub pred_hidden: usize,
}

impl EncoderConfig {
    /// Desk-scale encoder, just under 10⁴ trainable parameters for two channels.
    pub fn desk(in_channels: usize) -> Self {
        Self {
            in_channels,
            block_widths: vec![8, 12, 16, 32],
            repr_dim: 64,
            proj_dim: 32,
            pred_hidden: 128,
        }
    }

    pub fn paper(in_channels: usize) -> Self {
        Self {
            in_channels,
            block_widths: vec![32, 64, 128, 256],
            repr_dim: 512,
            proj_dim: 128,
            pred_hidden: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be at least 1".into()));
        }
        if self.repr_dim == 0 || self.proj_dim == 0 || self.pred_hidden == 0 {
            return Err(Error::Config("repr_dim, proj_dim and pred_hidden must be positive".into()));
        }
        if self.block_widths.is_empty() || self.block_widths.contains(&0) {
            return Err(Error::Config(format!(
                "block_widths must be non-empty and positive, got {:?}",
                self.block_widths
            )));
        }
        Ok(())
    }
}

/// Indices of a batch-norm layer inside a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
pub struct BatchNormLayer {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
}

impl BatchNormLayer {
    pub fn build<T: Real>(ps: &mut ParamSet<T>, prefix: &str, c: usize) -> Self {
        Self {
            gamma: ps.add(format!("{prefix}.gamma"), ParamKind::NormOrBias, Tensor::full(&[c], T::ONE)),
            beta: ps.add(format!("{prefix}.beta"), ParamKind::NormOrBias, Tensor::zeros(&[c])),
            running_mean: ps.add(format!("{prefix}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[c])),
            running_var: ps.add(format!("{prefix}.running_var"), ParamKind::Buffer, Tensor::full(&[c], T::ONE)),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, b: &Bound, x: Var, mode: Mode) -> Result<Var> {
        g.batch_norm(
            x,
            b.var(self.gamma),
            b.var(self.beta),
            (ps.get(self.running_mean).data(), ps.get(self.running_var).data()),
            (self.running_mean, self.running_var),
            mode,
        )
    }
}

/// Fully connected layer; weight stored `[in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct LinearLayer {
    pub weight: usize,
    pub bias: Option<usize>,
}

impl LinearLayer {
    /// Uniform init in ±1/√fan_in for weight and bias.
    pub fn build<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        let weight = ps.add(
            format!("{prefix}.weight"),
            ParamKind::Weight,
            Tensor::from_f64(&[fan_in, fan_out], &w).unwrap(),
        );
        let bias = bias.then(|| {
            let b: Vec<f64> = (0..fan_out).map(|_| dist.sample(rng)).collect();
            ps.add(
                format!("{prefix}.bias"),
                ParamKind::NormOrBias,
                Tensor::from_f64(&[fan_out], &b).unwrap(),
            )
        });
        Self { weight, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        g.linear(x, b.var(self.weight), self.bias.map(|i| b.var(i)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvBlock {
    pub conv: usize,
    pub bn: BatchNormLayer,
}

/// conv3×3 → batch norm → relu → maxpool 2×2, repeated, then global average
/// pooling and a linear map to `repr_dim`.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<ConvBlock>,
    pub fc: LinearLayer,
}

impl Encoder {
    pub fn build<T: Real, R: Rng>(ps: &mut ParamSet<T>, prefix: &str, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(cfg.block_widths.len());
        let mut c_in = cfg.in_channels;
        for (i, &c_out) in cfg.block_widths.iter().enumerate() {
            // Kaiming normal, fan-out mode, for relu.
            let std = (2.0 / (c_out * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            let w: Vec<f64> = (0..c_out * c_in * 9).map(|_| normal.sample(rng)).collect();
            let conv = ps.add(
                format!("{prefix}.block{i}.conv.weight"),
                ParamKind::Weight,
                Tensor::from_f64(&[c_out, c_in, 3, 3], &w).unwrap(),
            );
            let bn = BatchNormLayer::build(ps, &format!("{prefix}.block{i}.bn"), c_out);
            blocks.push(ConvBlock { conv, bn });
            c_in = c_out;
        }
        let fc = LinearLayer::build(ps, &format!("{prefix}.fc"), c_in, cfg.repr_dim, true, rng);
        Self { blocks, fc }
    }

    /// `x` is `[N, in_channels, mels, frames]`; returns `[N, repr_dim]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, b: &Bound, x: Var, mode: Mode) -> Result<Var> {
        let want = ps.get(self.blocks[0].conv).shape()[1];
        let got = g.shape(x);
        if got.len() != 4 || got[1] != want {
            return Err(Error::shape(
                "encoder",
                format!("input {got:?} does not match in_channels {want}"),
            ));
        }
        let mut h = x;
        for blk in &self.blocks {
            h = g.conv3x3(h, b.var(blk.conv))?;
            h = blk.bn.forward(g, ps, b, h, mode)?;
            h = g.relu(h);
            h = g.maxpool2(h)?;
        }
        let pooled = g.global_avg_pool(h)?;
        self.fc.forward(g, b, pooled)
    }
}

/// linear → batch norm → relu → linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: LinearLayer,
    pub bn: BatchNormLayer,
    pub fc2: LinearLayer,
}

impl Mlp {
    pub fn build<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let fc1 = LinearLayer::build(ps, &format!("{prefix}.fc1"), d_in, hidden, false, rng);
        let bn = BatchNormLayer::build(ps, &format!("{prefix}.bn"), hidden);
        let fc2 = LinearLayer::build(ps, &format!("{prefix}.fc2"), hidden, d_out, true, rng);
        Self { fc1, bn, fc2 }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, b: &Bound, x: Var, mode: Mode) -> Result<Var> {
        let h = self.fc1.forward(g, b, x)?;
        let h = self.bn.forward(g, ps, b, h, mode)?;
        let h = g.relu(h);
        self.fc2.forward(g, b, h)
    }
}

/// Online network of BYOL: encoder, projector and predictor, built in that order
/// so the first [`ByolNet::target_len`] parameters form the target network.
#[derive(Debug, Clone)]
pub struct ByolNet {
    pub encoder: Encoder,
    pub projector: Mlp,
    pub predictor: Mlp,
    target_len: usize,
}

impl ByolNet {
    pub fn build<T: Real, R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> (Self, ParamSet<T>) {
        let mut ps = ParamSet::new();
        let encoder = Encoder::build(&mut ps, "encoder", cfg, rng);
        let projector = Mlp::build(&mut ps, "projector", cfg.repr_dim, cfg.pred_hidden, cfg.proj_dim, rng);
        let target_len = ps.len();
        let predictor = Mlp::build(&mut ps, "predictor", cfg.proj_dim, cfg.pred_hidden, cfg.proj_dim, rng);
        (
            Self {
                encoder,
                projector,
                predictor,
                target_len,
            },
            ps,
        )
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    /// Number of leading parameters that belong to the encoder alone.
    pub fn encoder_len(&self) -> usize {
        self.projector.fc1.weight
    }
}
