//! Central finite differences against the tape, in f64.
//!
//! A perturbation of ±h that moves a relu input across zero or changes a
//! max-pool winner straddles a kink, where the central difference is not an
//! estimate of the derivative. Such entries are counted and excluded; callers
//! bound how many may be excluded.

use sonact::nn::{Bound, Graph, ParamKind, ParamSet, Var};

pub const H: f64 = 1e-3;

/// Builds a scalar loss from bound parameters.
pub type LossFn<'a> = dyn Fn(&mut Graph<f64>, &ParamSet<f64>, &Bound) -> Var + 'a;

#[derive(Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub straddled: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl CheckReport {
    pub fn straddled_fraction(&self) -> f64 {
        self.straddled as f64 / (self.checked + self.straddled).max(1) as f64
    }
}

fn eval(ps: &ParamSet<f64>, f: &LossFn) -> (f64, u64) {
    let mut g = Graph::new();
    let b = ps.bind(&mut g, true);
    let l = f(&mut g, ps, &b);
    (g.value(l).item(), g.kink_signature())
}

/// Relative error `|a − n| / max(|a|, |n|)`, with an absolute floor so that
/// entries whose true gradient is zero compare on absolute error.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn check(ps: &ParamSet<f64>, f: &LossFn) -> CheckReport {
    check_with(ps, f, H)
}

pub fn check_with(ps: &ParamSet<f64>, f: &LossFn, h: f64) -> CheckReport {
    let mut g = Graph::new();
    let b = ps.bind(&mut g, true);
    let l = f(&mut g, ps, &b);
    let base_sig = g.kink_signature();
    let grads = b.grads(&g.backward(l).unwrap());
    let mut rep = CheckReport::default();
    let mut work = ps.clone();
    for i in 0..ps.len() {
        if ps.kind(i) == ParamKind::Buffer {
            continue;
        }
        let analytic = grads[i].clone().unwrap_or_else(|| vec![0.0; ps.get(i).numel()]);
        for k in 0..ps.get(i).numel() {
            let orig = ps.get(i).data()[k];
            work.get_mut(i).data_mut()[k] = orig + h;
            let (up, sig_up) = eval(&work, f);
            work.get_mut(i).data_mut()[k] = orig - h;
            let (down, sig_down) = eval(&work, f);
            work.get_mut(i).data_mut()[k] = orig;
            if sig_up != base_sig || sig_down != base_sig {
                rep.straddled += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(analytic[k], numeric);
            rep.checked += 1;
            if e > rep.max_rel {
                rep.max_rel = e;
                rep.worst = format!("{}[{k}] analytic {} numeric {numeric}", ps.name(i), analytic[k]);
            }
        }
    }
    rep
}
