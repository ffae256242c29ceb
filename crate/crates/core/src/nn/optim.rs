use serde::{Deserialize, Serialize};

use super::params::{ParamKind, ParamSet};
use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Lars,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    /// LARS momentum.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// LARS trust coefficient η.
    pub trust: f64,
}

impl OptimizerConfig {
    pub fn lars(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Lars,
            lr,
            weight_decay,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            trust: 0.001,
        }
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::lars(lr, weight_decay)
        }
    }
}

/// Hyperparameters plus per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    fn ensure_buffers<T: Real>(&mut self, ps: &ParamSet<T>) -> Result<()> {
        if self.first.is_empty() {
            self.first = ps.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
            if self.config.kind == OptimizerKind::Adam {
                self.second = self.first.clone();
            }
        }
        if self.first.len() != ps.len() || self.first.iter().zip(ps.iter()).any(|(b, (_, _, t))| b.len() != t.numel()) {
            return Err(Error::shape("optimizer", "moment buffers do not match the parameter set"));
        }
        Ok(())
    }

    /// One update. Parameters with no gradient are left alone; any non-finite
    /// gradient aborts the whole step before anything is written.
    pub fn step<T: Real>(&mut self, ps: &mut ParamSet<T>, grads: &[Option<Vec<T>>]) -> Result<()> {
        if grads.len() != ps.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} gradients for {} parameters", grads.len(), ps.len()),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.len() != ps.get(i).numel() {
                    return Err(Error::shape(
                        "optimizer",
                        format!("gradient for {} has {} values, expected {}", ps.name(i), g.len(), ps.get(i).numel()),
                    ));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {}", ps.name(i))));
                }
            }
        }
        self.ensure_buffers(ps)?;
        self.step += 1;
        let c = self.config.clone();
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let kind = ps.kind(i);
            if kind == ParamKind::Buffer {
                continue;
            }
            let w = ps.get_mut(i).data_mut();
            match c.kind {
                OptimizerKind::Lars => {
                    let v = &mut self.first[i];
                    if kind == ParamKind::Weight {
                        let gp: Vec<f64> = g
                            .iter()
                            .zip(w.iter())
                            .map(|(g, w)| g.to_f64() + c.weight_decay * w.to_f64())
                            .collect();
                        let w_norm = w.iter().map(|x| x.to_f64().powi(2)).sum::<f64>().sqrt();
                        let g_norm = gp.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let local = if w_norm > 0.0 && g_norm > 0.0 {
                            c.trust * w_norm / (g_norm + c.eps)
                        } else {
                            1.0
                        };
                        for k in 0..w.len() {
                            v[k] = c.momentum * v[k] + c.lr * local * gp[k];
                            w[k] = T::from_f64(w[k].to_f64() - v[k]);
                        }
                    } else {
                        for k in 0..w.len() {
                            v[k] = c.momentum * v[k] + c.lr * g[k].to_f64();
                            w[k] = T::from_f64(w[k].to_f64() - v[k]);
                        }
                    }
                }
                OptimizerKind::Adam => {
                    let t = self.step as i32;
                    let bc1 = 1.0 - c.beta1.powi(t);
                    let bc2 = 1.0 - c.beta2.powi(t);
                    let (m, s) = (&mut self.first[i], &mut self.second[i]);
                    let wd = if kind == ParamKind::Weight { c.weight_decay } else { 0.0 };
                    for k in 0..w.len() {
                        let gk = g[k].to_f64() + wd * w[k].to_f64();
                        m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                        s[k] = c.beta2 * s[k] + (1.0 - c.beta2) * gk * gk;
                        let upd = c.lr * (m[k] / bc1) / ((s[k] / bc2).sqrt() + c.eps);
                        w[k] = T::from_f64(w[k].to_f64() - upd);
                    }
                }
            }
        }
        Ok(())
    }
}
