//! Tape-based reverse-mode autodiff.
//!
//! Every op appends a node holding its output value; `backward` walks the tape
//! in reverse and accumulates gradients into the inputs that need them. Layout
//! is NCHW throughout. Reductions accumulate in `f64`.

use rayon::prelude::*;

use super::{gemm, Real, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const L2_EPS: f64 = 1e-12;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Batch statistics observed by a train-mode batch norm, to be folded into
/// the running buffers by the owner of the parameters.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub mean_index: usize,
    pub var_index: usize,
    pub batch_mean: Vec<f64>,
    /// Unbiased batch variance.
    pub batch_var: Vec<f64>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Conv3x3 {
        x: Var,
        w: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<f64>,
        train: bool,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    RowDot(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    bn_updates: Vec<BnUpdate>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::shape(op, format!("expected rank {rank}, got {shape:?}")));
    }
    Ok(())
}

/// `(Σ a, Σ a·b)` in f64 with independent lanes.
fn sum_and_dot_f64<T: Real>(a: &[T], b: &[T]) -> (f64, f64) {
    let (mut s, mut d) = ([0.0f64; 8], [0.0f64; 8]);
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            let xv = x[l].to_f64();
            s[l] += xv;
            d[l] += xv * y[l].to_f64();
        }
    }
    let mut st: f64 = s.iter().sum();
    let mut dt: f64 = d.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        st += x.to_f64();
        dt += x.to_f64() * y.to_f64();
    }
    (st, dt)
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::ZERO; len])
}

/// Expands `x[c, h, w]` into `cols[(c·9 + ky·3 + kx), (y·w + x)]` with zero padding 1.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::ZERO;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::ZERO;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back into `dx`.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += *s;
                            }
                        }
                        1 => {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += *s;
                            }
                        }
                        _ => {
                            for (d, s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient (a parameter).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf without gradient (data or a stop-gradient target).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn zip_map(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `scale·x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, c) = (T::from_f64(scale), T::from_f64(shift));
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| s * e + c).collect()).unwrap();
        self.push(out, Op::Affine(x, scale), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| e * e).collect()).unwrap();
        self.push(out, Op::Square(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.to_f64()).sum();
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: f64 = v.data().iter().map(|e| e.to_f64()).sum::<f64>() / v.numel().max(1) as f64;
        self.push(Tensor::scalar(T::from_f64(s)), Op::Mean(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&e| if e > T::ZERO { e } else { T::ZERO }).collect(),
        )
        .unwrap();
        self.push(out, Op::Relu(x), &[x])
    }

    /// 3×3 convolution, stride 1, zero padding 1, no bias. `w` is `[O, C, 3, 3]`.
    pub fn conv3x3(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        expect_rank("conv3x3 input", &xs, 4)?;
        expect_rank("conv3x3 weight", &ws, 4)?;
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let o = ws[0];
        if ws[1] != c || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::shape(
                "conv3x3",
                format!("weight {ws:?} does not match input channels {c} (input {xs:?})"),
            ));
        }
        let hw = h * wd;
        let xin = self.value(x).data();
        let wt = self.value(w).data();
        let mut out = vec![T::ZERO; n * o * hw];
        out.par_chunks_mut(o * hw)
            .enumerate()
            .for_each_init(
                || vec![T::ZERO; c * 9 * hw],
                |cols, (i, y)| {
                    im2col(&xin[i * c * hw..(i + 1) * c * hw], c, h, wd, cols);
                    gemm(o, c * 9, hw, wt, false, cols, false, y, false);
                },
            );
        let out = Tensor::new(vec![n, o, h, wd], out)?;
        Ok(self.push(out, Op::Conv3x3 { x, w }, &[x, w]))
    }

    /// Batch norm over `[N, C, ...]`, statistics per channel `C`.
    ///
    /// In train mode the batch statistics are used and recorded as a [`BnUpdate`];
    /// in eval mode `running` supplies mean and variance.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[T], &[T]),
        buffer_indices: (usize, usize),
        mode: Mode,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::shape("batch_norm", format!("input {xs:?} has no channel axis")));
        }
        let (n, c) = (xs[0], xs[1]);
        let s: usize = xs[2..].iter().product();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name} {:?} does not match {c} channels", self.shape(v)),
                ));
            }
        }
        let m = n * s;
        let xv = self.value(x).data();
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::shape(
                        "batch_norm",
                        format!("train mode needs more than one value per channel, input {xs:?}"),
                    ));
                }
                let mut sum = vec![0.0f64; c];
                let mut sq = vec![0.0f64; c];
                for (p, plane) in xv.chunks(s.max(1)).enumerate() {
                    let (a, b) = sum_and_dot_f64(plane, plane);
                    sum[p % c] += a;
                    sq[p % c] += b;
                }
                sum.iter()
                    .zip(&sq)
                    .map(|(&a, &b)| {
                        let mu = a / m as f64;
                        (mu, (b / m as f64 - mu * mu).max(0.0))
                    })
                    .unzip()
            }
            Mode::Eval => {
                if running.0.len() != c || running.1.len() != c {
                    return Err(Error::shape("batch_norm", "running statistics length mismatch"));
                }
                (
                    running.0.iter().map(|v| v.to_f64()).collect(),
                    running.1.iter().map(|v| v.to_f64()).collect(),
                )
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::ZERO; xv.len()];
        let mut out = vec![T::ZERO; xv.len()];
        for (p, ((xp, hp), op)) in xv
            .chunks(s.max(1))
            .zip(xhat.chunks_mut(s.max(1)))
            .zip(out.chunks_mut(s.max(1)))
            .enumerate()
        {
            let ci = p % c;
            let (mu, is) = (T::from_f64(mean[ci]), T::from_f64(inv_std[ci]));
            let (gc, bc) = (g[ci], b[ci]);
            for ((&xk, hk), ok) in xp.iter().zip(hp.iter_mut()).zip(op.iter_mut()) {
                let h = (xk - mu) * is;
                *hk = h;
                *ok = gc * h + bc;
            }
        }
        if mode == Mode::Train {
            let unbias = m as f64 / (m - 1) as f64;
            self.bn_updates.push(BnUpdate {
                mean_index: buffer_indices.0,
                var_index: buffer_indices.1,
                batch_mean: mean,
                batch_var: var.iter().map(|v| v * unbias).collect(),
            });
        }
        let out = Tensor::new(xs, out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            &[x, gamma, beta],
        ))
    }

    /// 2×2 max pooling, stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("maxpool2", &xs, 4)?;
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape("maxpool2", format!("input {xs:?} too small to pool")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let plane = &xv[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = (2 * y) * w + 2 * xx;
                    for cand in [(2 * y) * w + 2 * xx + 1, (2 * y + 1) * w + 2 * xx, (2 * y + 1) * w + 2 * xx + 1] {
                        if plane[cand] > plane[best] {
                            best = cand;
                        }
                    }
                    out.push(plane[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// `[N, C, H, W] → [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("global_avg_pool", &xs, 4)?;
        let (n, c, s) = (xs[0], xs[1], xs[2] * xs[3]);
        let xv = self.value(x).data();
        let out: Vec<T> = (0..n * c)
            .map(|p| {
                let sum: f64 = xv[p * s..(p + 1) * s].iter().map(|v| v.to_f64()).sum();
                T::from_f64(sum / s as f64)
            })
            .collect();
        let out = Tensor::new(vec![n, c], out)?;
        Ok(self.push(out, Op::GlobalAvgPool(x), &[x]))
    }

    /// `x[N, I] · w[I, O] + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        expect_rank("linear input", &xs, 2)?;
        expect_rank("linear weight", &ws, 2)?;
        if xs[1] != ws[0] {
            return Err(Error::shape("linear", format!("input {xs:?} vs weight {ws:?}")));
        }
        let (n, i, o) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::ZERO; n * o];
        gemm(n, i, o, self.value(x).data(), false, self.value(w).data(), false, &mut out, false);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape("linear", format!("bias {:?} vs {o} outputs", self.shape(b))));
            }
            let bv = self.value(b).data();
            for row in out.chunks_mut(o) {
                for (r, &bb) in row.iter_mut().zip(bv) {
                    *r += bb;
                }
            }
        }
        let out = Tensor::new(vec![n, o], out)?;
        let inputs: Vec<Var> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// Row-wise L2 normalization of `[N, D]`; all-zero rows stay zero.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("l2_normalize", &xs, 2)?;
        let d = xs[1];
        let xv = self.value(x).data();
        let mut norms = Vec::with_capacity(xs[0]);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(d.max(1)) {
            let nrm = row.iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt();
            let denom = nrm.max(L2_EPS);
            out.extend(row.iter().map(|&v| T::from_f64(v.to_f64() / denom)));
            norms.push(nrm);
        }
        let out = Tensor::new(xs, out)?;
        Ok(self.push(out, Op::L2Normalize { x, norms }, &[x]))
    }

    /// Per-row dot product of two `[N, D]` tensors, giving `[N]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("row_dot", self.shape(a), self.shape(b))?;
        expect_rank("row_dot", self.shape(a), 2)?;
        let d = self.shape(a)[1];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = va
            .chunks(d.max(1))
            .zip(vb.chunks(d.max(1)))
            .map(|(x, y)| T::from_f64(x.iter().zip(y).map(|(p, q)| p.to_f64() * q.to_f64()).sum()))
            .collect();
        let n = out.len();
        let out = Tensor::new(vec![n], out)?;
        Ok(self.push(out, Op::RowDot(a, b), &[a, b]))
    }

    /// Hash of the branch taken at every non-differentiable op: relu input
    /// signs and max-pool winners. Two forward passes with equal signatures
    /// lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        (*v > T::ZERO).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        macro_rules! gbuf {
            ($v:expr) => {
                slot(grads, $v, self.nodes[$v.0].value.numel())
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        gbuf!(v).iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    gbuf!(*a).iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                }
                if self.wants(*b) {
                    gbuf!(*b).iter_mut().zip(g).for_each(|(d, &s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let d = gbuf!(*a);
                    for i in 0..g.len() {
                        d[i] += g[i] * vb[i];
                    }
                }
                if self.wants(*b) {
                    let d = gbuf!(*b);
                    for i in 0..g.len() {
                        d[i] += g[i] * va[i];
                    }
                }
            }
            Op::Affine(x, scale) => {
                if self.wants(*x) {
                    let s = T::from_f64(*scale);
                    gbuf!(*x).iter_mut().zip(g).for_each(|(d, &e)| *d += s * e);
                }
            }
            Op::Square(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    let two = T::from_f64(2.0);
                    let d = gbuf!(*x);
                    for i in 0..g.len() {
                        d[i] += two * xv[i] * g[i];
                    }
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                if self.wants(*x) {
                    let n = self.value(*x).numel();
                    let s = match node.op {
                        Op::Mean(_) => g[0] / T::from_f64(n.max(1) as f64),
                        _ => g[0],
                    };
                    gbuf!(*x).iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    let d = gbuf!(*x);
                    for i in 0..g.len() {
                        if xv[i] > T::ZERO {
                            d[i] += g[i];
                        }
                    }
                }
            }
            Op::Conv3x3 { x, w } => self.conv_backward(*x, *w, g, grads),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xs = self.shape(*x);
                let (n, c) = (xs[0], xs[1]);
                let s: usize = xs[2..].iter().product::<usize>().max(1);
                let m = (n * s) as f64;
                let gm = self.value(*gamma).data();
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for (p, (gp, hp)) in g.chunks(s).zip(xhat.chunks(s)).enumerate() {
                    let (a, b) = sum_and_dot_f64(gp, hp);
                    sum_g[p % c] += a;
                    sum_gx[p % c] += b;
                }
                if self.wants(*gamma) {
                    gbuf!(*gamma).iter_mut().zip(&sum_gx).for_each(|(d, &v)| *d += T::from_f64(v));
                }
                if self.wants(*beta) {
                    gbuf!(*beta).iter_mut().zip(&sum_g).for_each(|(d, &v)| *d += T::from_f64(v));
                }
                if self.wants(*x) {
                    let d = gbuf!(*x);
                    for (p, ((dp, gp), hp)) in d.chunks_mut(s).zip(g.chunks(s)).zip(xhat.chunks(s)).enumerate() {
                        let ci = p % c;
                        let k_scale = gm[ci].to_f64() * inv_std[ci];
                        if *train {
                            // k/m · (m·g − Σg − x̂·Σgx̂)
                            let a = T::from_f64(k_scale);
                            let b0 = T::from_f64(k_scale * sum_g[ci] / m);
                            let b1 = T::from_f64(k_scale * sum_gx[ci] / m);
                            for ((dk, &gk), &hk) in dp.iter_mut().zip(gp).zip(hp) {
                                *dk += a * gk - b0 - b1 * hk;
                            }
                        } else {
                            let a = T::from_f64(k_scale);
                            for (dk, &gk) in dp.iter_mut().zip(gp) {
                                *dk += a * gk;
                            }
                        }
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if self.wants(*x) {
                    let xs = self.shape(*x);
                    let plane_in = xs[2] * xs[3];
                    let plane_out = (xs[2] / 2) * (xs[3] / 2);
                    let d = gbuf!(*x);
                    for (k, (&gi, &am)) in g.iter().zip(argmax).enumerate() {
                        let p = k / plane_out;
                        d[p * plane_in + am as usize] += gi;
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.wants(*x) {
                    let xs = self.shape(*x);
                    let s = xs[2] * xs[3];
                    let inv = T::from_f64(1.0 / s as f64);
                    let d = gbuf!(*x);
                    for (p, &gi) in g.iter().enumerate() {
                        let v = gi * inv;
                        d[p * s..(p + 1) * s].iter_mut().for_each(|e| *e += v);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, i) = (xs[0], xs[1]);
                let o = self.shape(*w)[1];
                if self.wants(*x) {
                    gemm(n, o, i, g, false, self.value(*w).data(), true, gbuf!(*x), true);
                }
                if self.wants(*w) {
                    gemm(i, n, o, self.value(*x).data(), true, g, false, gbuf!(*w), true);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut acc = vec![0.0f64; o];
                        for row in g.chunks(o) {
                            for (a, v) in acc.iter_mut().zip(row) {
                                *a += v.to_f64();
                            }
                        }
                        gbuf!(*b).iter_mut().zip(&acc).for_each(|(d, &v)| *d += T::from_f64(v));
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                if self.wants(*x) {
                    let d_dim = self.shape(*x)[1].max(1);
                    let y = node.value.data();
                    let d = gbuf!(*x);
                    for (r, &nrm) in norms.iter().enumerate() {
                        let span = r * d_dim..(r + 1) * d_dim;
                        let (yr, gr) = (&y[span.clone()], &g[span.clone()]);
                        if nrm > L2_EPS {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
                            for (k, dk) in d[span].iter_mut().enumerate() {
                                *dk += T::from_f64((gr[k].to_f64() - yr[k].to_f64() * dot) / nrm);
                            }
                        } else {
                            for (k, dk) in d[span].iter_mut().enumerate() {
                                *dk += T::from_f64(gr[k].to_f64() / L2_EPS);
                            }
                        }
                    }
                }
            }
            Op::RowDot(a, b) => {
                let dd = self.shape(*a)[1].max(1);
                for (src, dst) in [(*b, *a), (*a, *b)] {
                    if self.wants(dst) {
                        let sv = self.value(src).data();
                        let d = gbuf!(dst);
                        for (r, &gr) in g.iter().enumerate() {
                            for k in r * dd..(r + 1) * dd {
                                d[k] += gr * sv[k];
                            }
                        }
                    }
                }
            }
        }
    }

    fn conv_backward(&self, x: Var, w: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let xs = self.shape(x);
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let o = self.shape(w)[0];
        let hw = h * wd;
        let xin = self.value(x).data();
        let wt = self.value(w).data();
        let want_w = self.wants(w);
        let want_x = self.wants(x);
        // Per-sample partial results, reduced in sample order for determinism.
        let partial: Vec<(Vec<T>, Vec<T>)> = (0..n)
            .into_par_iter()
            .map_init(
                || vec![T::ZERO; c * 9 * hw],
                |cols, i| {
                    let gy = &g[i * o * hw..(i + 1) * o * hw];
                    let mut dw = Vec::new();
                    if want_w {
                        im2col(&xin[i * c * hw..(i + 1) * c * hw], c, h, wd, cols);
                        dw = vec![T::ZERO; o * c * 9];
                        gemm(o, hw, c * 9, gy, false, cols, true, &mut dw, false);
                    }
                    let mut dx = Vec::new();
                    if want_x {
                        gemm(c * 9, o, hw, wt, true, gy, false, cols, false);
                        dx = vec![T::ZERO; c * hw];
                        col2im(cols, c, h, wd, &mut dx);
                    }
                    (dw, dx)
                },
            )
            .collect();
        if want_w {
            let slot = grads[w.0].get_or_insert_with(|| vec![T::ZERO; o * c * 9]);
            for (dw, _) in &partial {
                slot.iter_mut().zip(dw).for_each(|(d, &v)| *d += v);
            }
        }
        if want_x {
            let slot = grads[x.0].get_or_insert_with(|| vec![T::ZERO; n * c * hw]);
            for (i, (_, dx)) in partial.iter().enumerate() {
                slot[i * c * hw..(i + 1) * c * hw]
                    .iter_mut()
                    .zip(dx)
                    .for_each(|(d, &v)| *d += v);
            }
        }
    }
}

/// Gradients of the loss with respect to every node that needed one.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the node is disconnected from the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as an owned vector, zeros when disconnected.
    pub fn get_or_zero(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::ZERO; len])
    }
}
