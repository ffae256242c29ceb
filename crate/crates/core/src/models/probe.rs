use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Graph, OptimizerConfig, OptimizerState, ParamKind, ParamSet, Tensor};

pub const PROBE_MODEL_KIND: &str = "probe";

/// Fixed linear change of coordinates applied to the cached representations
/// before the probe is trained; folded back into the weights afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precondition {
    None,
    /// Per-dimension mean and standard deviation.
    Standardize,
    /// Mean and Cholesky factor of the covariance.
    Whiten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub optimizer: OptimizerConfig,
    pub batch_cap: usize,
    pub epochs: usize,
    pub precondition: Precondition,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(1e-3, 1e-4),
            batch_cap: 1024,
            epochs: 2000,
            precondition: Precondition::Whiten,
            seed: 0,
        }
    }
}

/// `a = Wᵀz + b`, `W` stored `[repr_dim, action_dim]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeWeights {
    pub repr_dim: usize,
    pub action_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ProbeWeights {
    pub fn apply(&self, z: &[f32]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (i, &zi) in z.iter().enumerate() {
            let row = &self.w[i * self.action_dim..(i + 1) * self.action_dim];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += zi as f64 * wij;
            }
        }
        out
    }

    /// Mean over rows of the squared error norm.
    pub fn loss(&self, reps: &Tensor<f32>, targets: &[Vec<f64>]) -> f64 {
        let n = targets.len();
        (0..n)
            .map(|k| {
                self.apply(reps.row(k))
                    .iter()
                    .zip(&targets[k])
                    .map(|(p, a)| (p - a) * (p - a))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(PROBE_MODEL_KIND, meta);
        c.insert("probe.weight", Tensor::<f64>::from_f64(&[self.repr_dim, self.action_dim], &self.w)?.cast());
        c.insert("probe.bias", Tensor::<f64>::from_f64(&[self.action_dim], &self.b)?.cast());
        Ok(c)
    }

    pub fn from_checkpoint(c: &mut Checkpoint) -> Result<Self> {
        if c.model_kind != PROBE_MODEL_KIND {
            return Err(Error::Checkpoint(format!(
                "expected model kind {PROBE_MODEL_KIND}, found {}",
                c.model_kind
            )));
        }
        let w = c.take("probe.weight")?;
        let b = c.take("probe.bias")?;
        if w.shape().len() != 2 || b.shape() != [w.shape()[1]] {
            return Err(Error::Checkpoint(format!(
                "probe tensors have shapes {:?} and {:?}",
                w.shape(),
                b.shape()
            )));
        }
        Ok(Self {
            repr_dim: w.shape()[0],
            action_dim: w.shape()[1],
            w: w.to_f64_vec(),
            b: b.to_f64_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFit {
    /// Training loss of the returned weights on all rows.
    pub final_loss: f64,
    /// Full-data loss after each epoch, in preconditioned coordinates.
    pub trace: Vec<f64>,
}

/// Affine map `x = (z − μ)·T` with `T` upper triangular or diagonal, `[r, r]`.
struct Transform {
    mean: Vec<f64>,
    t: Vec<f64>,
}

fn column_stats(z: &[f64], n: usize, r: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; r];
    for row in z.chunks(r) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; r * r];
    for row in z.chunks(r) {
        for i in 0..r {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[i * r + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..r {
        for j in 0..=i {
            cov[i * r + j] /= n as f64;
            cov[j * r + i] = cov[i * r + j];
        }
    }
    (mean, cov)
}

/// Lower Cholesky factor of `a` (`[r, r]`, symmetric positive definite).
fn cholesky(a: &[f64], r: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * r + k] * l[j * r + k]).sum();
            if i == j {
                let d = a[i * r + i] - s;
                if !(d > 0.0) {
                    return Err(Error::NonFinite(format!("covariance not positive definite at {i}")));
                }
                l[i * r + i] = d.sqrt();
            } else {
                l[i * r + j] = (a[i * r + j] - s) / l[j * r + j];
            }
        }
    }
    Ok(l)
}

/// `T = L⁻ᵀ`, so `x = (z − μ)·L⁻ᵀ` has identity covariance.
fn inverse_transpose_lower(l: &[f64], r: usize) -> Vec<f64> {
    // Solve L·X = I column by column; X = L⁻¹, then transpose.
    let mut inv = vec![0.0; r * r];
    for c in 0..r {
        for i in c..r {
            let s: f64 = (c..i).map(|k| l[i * r + k] * inv[k * r + c]).sum();
            let rhs = if i == c { 1.0 } else { 0.0 };
            inv[i * r + c] = (rhs - s) / l[i * r + i];
        }
    }
    let mut t = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            t[i * r + j] = inv[j * r + i];
        }
    }
    t
}

fn fit_transform(z: &[f64], n: usize, r: usize, p: Precondition) -> Result<Transform> {
    let (mean, cov) = column_stats(z, n, r);
    let mut t = vec![0.0; r * r];
    match p {
        Precondition::None => {
            for i in 0..r {
                t[i * r + i] = 1.0;
            }
            return Ok(Transform { mean: vec![0.0; r], t });
        }
        Precondition::Standardize => {
            for i in 0..r {
                let sd = cov[i * r + i].sqrt();
                t[i * r + i] = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
            }
        }
        Precondition::Whiten => {
            let trace: f64 = (0..r).map(|i| cov[i * r + i]).sum();
            let ridge = 1e-6 * (trace / r as f64) + 1e-12;
            let mut reg = cov;
            for i in 0..r {
                reg[i * r + i] += ridge;
            }
            t = inverse_transpose_lower(&cholesky(&reg, r)?, r);
        }
    }
    Ok(Transform { mean, t })
}

fn apply_transform(z: &[f64], r: usize, tr: &Transform) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for (row, o) in z.chunks(r).zip(out.chunks_mut(r)) {
        for i in 0..r {
            let d = row[i] - tr.mean[i];
            if d == 0.0 {
                continue;
            }
            for j in 0..r {
                o[j] += d * tr.t[i * r + j];
            }
        }
    }
    out
}

/// Linear probe on cached representations `[n, repr_dim]`, trained with the
/// configured optimizer on the mean squared error norm.
pub fn fit_probe(reps: &Tensor<f32>, targets: &[Vec<f64>], cfg: &ProbeConfig) -> Result<(ProbeWeights, ProbeFit)> {
    let n = targets.len();
    if n == 0 {
        return Err(Error::Dataset("cannot fit a probe on an empty split".into()));
    }
    if reps.shape().len() != 2 || reps.shape()[0] != n {
        return Err(Error::shape(
            "fit_probe",
            format!("representations {:?} for {n} targets", reps.shape()),
        ));
    }
    let r = reps.shape()[1];
    let d = targets[0].len();
    if targets.iter().any(|t| t.len() != d) {
        return Err(Error::shape("fit_probe", "targets have differing dimensions"));
    }
    let z: Vec<f64> = reps.to_f64_vec();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("probe representations".into()));
    }
    let tr = fit_transform(&z, n, r, cfg.precondition)?;
    let x = apply_transform(&z, r, &tr);
    let a: Vec<f64> = targets.concat();
    let mut mean_target = vec![0.0; d];
    for t in targets {
        for (m, v) in mean_target.iter_mut().zip(t) {
            *m += v / n as f64;
        }
    }

    let mut ps = ParamSet::<f64>::new();
    let wi = ps.add("probe.weight", ParamKind::Weight, Tensor::zeros(&[r, d]));
    let bi = ps.add("probe.bias", ParamKind::NormOrBias, Tensor::new(vec![d], mean_target)?);
    let mut opt = OptimizerState::new(cfg.optimizer.clone());
    let batch = cfg.batch_cap.max(1).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let full_x = Tensor::new(vec![n, r], x.clone())?;
    let full_a = Tensor::new(vec![n, d], a.clone())?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let (xb, ab) = if batch == n {
                (full_x.clone(), full_a.clone())
            } else {
                let mut xb = Vec::with_capacity(chunk.len() * r);
                let mut ab = Vec::with_capacity(chunk.len() * d);
                for &k in chunk {
                    xb.extend_from_slice(&x[k * r..(k + 1) * r]);
                    ab.extend_from_slice(&a[k * d..(k + 1) * d]);
                }
                (Tensor::new(vec![chunk.len(), r], xb)?, Tensor::new(vec![chunk.len(), d], ab)?)
            };
            let mut g = Graph::<f64>::new();
            let bound = ps.bind(&mut g, true);
            let loss = squared_error(&mut g, &bound, wi, bi, xb, ab)?;
            let grads = g.backward(loss)?;
            opt.step(&mut ps, &bound.grads(&grads))?;
        }
        let mut g = Graph::<f64>::new();
        let bound = ps.bind(&mut g, false);
        let loss = squared_error(&mut g, &bound, wi, bi, full_x.clone(), full_a.clone())?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("probe loss after {} epochs", trace.len() + 1)));
        }
        trace.push(value);
    }

    // Fold the preconditioner back: W = T·W', b = b' − μᵀW.
    let wp = ps.get(wi).data();
    let mut w = vec![0.0; r * d];
    for i in 0..r {
        for j in 0..r {
            let tij = tr.t[i * r + j];
            if tij == 0.0 {
                continue;
            }
            for c in 0..d {
                w[i * d + c] += tij * wp[j * d + c];
            }
        }
    }
    let mut b = ps.get(bi).data().to_vec();
    for i in 0..r {
        for c in 0..d {
            b[c] -= tr.mean[i] * w[i * d + c];
        }
    }
    // Stored as f32, so round here to keep fresh and reloaded probes identical.
    let round = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect();
    let weights = ProbeWeights {
        repr_dim: r,
        action_dim: d,
        w: round(w),
        b: round(b),
    };
    if weights.w.iter().chain(&weights.b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("probe weights".into()));
    }
    let final_loss = weights.loss(reps, targets);
    Ok((weights, ProbeFit { final_loss, trace }))
}

fn squared_error(
    g: &mut Graph<f64>,
    bound: &crate::nn::Bound,
    wi: usize,
    bi: usize,
    x: Tensor<f64>,
    a: Tensor<f64>,
) -> Result<crate::nn::Var> {
    let rows = x.shape()[0];
    let x = g.constant(x);
    let a = g.constant(a);
    let p = g.linear(x, bound.var(wi), Some(bound.var(bi)))?;
    let e = g.sub(p, a)?;
    let e2 = g.square(e);
    let s = g.sum(e2);
    Ok(g.affine(s, 1.0 / rows as f64, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_whitening_gives_identity_covariance() {
        let z = vec![1.0, 2.0, 0.5, 2.0, 3.5, -1.0, -1.0, 0.0, 2.0, 0.3, 1.0, 1.0];
        let tr = fit_transform(&z, 4, 3, Precondition::Whiten).unwrap();
        let x = apply_transform(&z, 3, &tr);
        let (m, c) = column_stats(&x, 4, 3);
        for i in 0..3 {
            assert!(m[i].abs() < 1e-12);
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((c[i * 3 + j] - want).abs() < 1e-3, "{c:?}");
            }
        }
    }

    #[test]
    fn zero_representations_predict_mean_target() {
        let reps = Tensor::zeros(&[4, 3]);
        let targets = vec![vec![1.0], vec![2.0], vec![4.0], vec![5.0]];
        let (w, fit) = fit_probe(&reps, &targets, &ProbeConfig { epochs: 50, ..Default::default() }).unwrap();
        assert!((w.apply(&[0.0; 3])[0] - 3.0).abs() < 1e-9);
        assert!((fit.final_loss - 2.5).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ProbeWeights {
            repr_dim: 2,
            action_dim: 1,
            w: vec![0.5, -1.0],
            b: vec![0.25],
        };
        let mut c = Checkpoint::from_bytes(&p.to_checkpoint(serde_json::json!({})).unwrap().to_bytes().unwrap()).unwrap();
        assert_eq!(ProbeWeights::from_checkpoint(&mut c).unwrap(), p);
    }
}
