//! Acceptance run: one line per criterion, PASS or FAIL, with the measured
//! values above it. Set `SONACT_ACCEPTANCE_DIR` to keep stage outputs between
//! runs; otherwise everything is recomputed in a temporary directory.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::gradcheck::{check, check_with, CheckReport, LossFn};
use common::{randn_tensor, rng};
use rand::Rng;
use sonact::dsp::{amplitude_envelope, condition, mel_spectrogram, resample_down, AudioClip, Envelope, ENVELOPE_FRAME};
use sonact::harness::{Method, Pipeline, RunConfig, Scale};
use sonact::models::fit_probe;
use sonact::nn::{BatchNormLayer, Bound, Encoder, EncoderConfig, Graph, Mode, ParamKind, ParamSet, Tensor, Var};
use sonact::synth::{count_bursts, generate_dataset, simulate, ActionParams, GenerateOptions, TaskId};
use sonact::{dtw_distance, ActionSpec};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const GRAD_TOL: f64 = 1e-4;
const MAX_STRADDLED: f64 = 0.1;
const DTW_TOL: f64 = 1e-9;
const DTW_TRIALS: usize = 500;
const POWER_TOL: f64 = 1e-5;
const STOPBAND_DB: f64 = -40.0;
const PROBE_GAP: f64 = 0.01;

/// Criteria measured to fall short at desk scale; see the README.
const KNOWN_SHORTFALLS: [u8; 3] = [5, 6, 8];

const EPOCHS: usize = 10;
const BATCH: usize = 32;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    summary: String,
    seconds: f64,
}

fn criterion(out: &mut Vec<Outcome>, id: u8, name: &'static str, f: impl FnOnce() -> (bool, String)) {
    println!("\n== criterion {id}: {name}");
    let t = Instant::now();
    let (pass, summary) = f();
    let seconds = t.elapsed().as_secs_f64();
    println!("   -> {} in {seconds:.1}s: {summary}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome {
        id,
        name,
        pass,
        summary,
        seconds,
    });
}

// ---------------------------------------------------------------- gradients

fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let shape = g.shape(out).to_vec();
    let r = g.constant(randn_tensor(&mut rng(seed), &shape));
    let m = g.mul(out, r).unwrap();
    g.sum(m)
}

fn params(shapes: &[(&str, &[usize])], seed: u64) -> ParamSet<f64> {
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    for (name, shape) in shapes {
        ps.add(*name, ParamKind::Weight, randn_tensor(&mut r, shape));
    }
    ps
}

fn grad_ok(name: &str, rep: &CheckReport, worst: &mut f64) -> bool {
    *worst = worst.max(rep.max_rel);
    let ok = rep.checked > 0 && rep.max_rel < GRAD_TOL && rep.straddled_fraction() <= MAX_STRADDLED;
    println!(
        "   {name:<28} checked {:>6}  kinks {:>4}  max rel err {:.2e}{}",
        rep.checked,
        rep.straddled,
        rep.max_rel,
        if ok { "" } else { "  <-- over tolerance" }
    );
    ok
}

fn gradient_oracle() -> (bool, String) {
    let mut worst = 0.0;
    let mut ok = true;
    let mut run = |name: &str, ps: &ParamSet<f64>, f: &LossFn| {
        let rep = check(ps, f);
        ok &= grad_ok(name, &rep, &mut worst);
    };
    let ps = params(&[("a", &[3, 4]), ("b", &[3, 4])], 1);
    run("add", &ps, &|g, _, b| {
        let y = g.add(b.var(0), b.var(1)).unwrap();
        project(g, y, 10)
    });
    run("sub", &ps, &|g, _, b| {
        let y = g.sub(b.var(0), b.var(1)).unwrap();
        project(g, y, 11)
    });
    run("mul", &ps, &|g, _, b| {
        let y = g.mul(b.var(0), b.var(1)).unwrap();
        project(g, y, 12)
    });
    run("affine", &ps, &|g, _, b| {
        let y = g.affine(b.var(0), -1.7, 0.3);
        project(g, y, 13)
    });
    run("square", &ps, &|g, _, b| {
        let y = g.square(b.var(0));
        project(g, y, 14)
    });
    run("sum", &ps, &|g, _, b| {
        let y = g.square(b.var(0));
        g.sum(y)
    });
    run("mean", &ps, &|g, _, b| {
        let y = g.square(b.var(1));
        g.mean(y)
    });
    run("relu", &ps, &|g, _, b| {
        let y = g.relu(b.var(0));
        project(g, y, 15)
    });
    run("l2_normalize", &ps, &|g, _, b| {
        let y = g.l2_normalize(b.var(0)).unwrap();
        project(g, y, 16)
    });
    run("row_dot", &ps, &|g, _, b| {
        let y = g.row_dot(b.var(0), b.var(1)).unwrap();
        project(g, y, 17)
    });
    let ps = params(&[("x", &[2, 3, 6, 5]), ("w", &[4, 3, 3, 3])], 5);
    run("conv3x3", &ps, &|g, _, b| {
        let y = g.conv3x3(b.var(0), b.var(1)).unwrap();
        project(g, y, 20)
    });
    let ps = params(&[("x", &[2, 3, 6, 5])], 6);
    run("maxpool2", &ps, &|g, _, b| {
        let y = g.maxpool2(b.var(0)).unwrap();
        project(g, y, 21)
    });
    run("global_avg_pool", &ps, &|g, _, b| {
        let y = g.global_avg_pool(b.var(0)).unwrap();
        project(g, y, 22)
    });
    let mut ps = params(&[("x", &[4, 5]), ("w", &[5, 3])], 7);
    ps.add("b", ParamKind::NormOrBias, randn_tensor(&mut rng(70), &[3]));
    run("linear", &ps, &|g, _, b| {
        let y = g.linear(b.var(0), b.var(1), Some(b.var(2))).unwrap();
        project(g, y, 23)
    });
    for (mode, shape) in [(Mode::Train, &[3usize, 4, 2, 3][..]), (Mode::Eval, &[3, 4, 2, 3][..])] {
        let mut ps = params(&[("x", shape)], 9);
        let bn = BatchNormLayer::build(&mut ps, "bn", 4);
        *ps.get_mut(bn.gamma) = randn_tensor(&mut rng(90), &[4]);
        *ps.get_mut(bn.beta) = randn_tensor(&mut rng(91), &[4]);
        *ps.get_mut(bn.running_mean) = randn_tensor(&mut rng(92), &[4]);
        *ps.get_mut(bn.running_var) = Tensor::new(vec![4], vec![0.5, 1.0, 2.0, 3.0]).unwrap();
        run(&format!("batch_norm {mode:?}"), &ps, &|g, p, b| {
            let y = bn.forward(g, p, b, b.var(0), mode).unwrap();
            project(g, y, 32)
        });
    }

    let cfg = EncoderConfig::desk(2);
    let mut r = rng(40);
    let mut ps = ParamSet::new();
    let enc = Encoder::build(&mut ps, "encoder", &cfg, &mut r);
    let x = randn_tensor(&mut r, &[2, 2, 16, 32]);
    let n_params = ps.n_trainable();
    println!("   desk encoder: {n_params} trainable parameters");
    ok &= n_params <= 10_000;
    let f = |g: &mut Graph<f64>, p: &ParamSet<f64>, b: &Bound| {
        let xv = g.constant(x.clone());
        let z = enc.forward(g, p, b, xv, Mode::Eval).unwrap();
        project(g, z, 41)
    };
    let rep = check(&ps, &f);
    ok &= grad_ok("encoder (eval, h=1e-3)", &rep, &mut worst);
    let f = |g: &mut Graph<f64>, p: &ParamSet<f64>, b: &Bound| {
        let xv = g.constant(x.clone());
        let z = enc.forward(g, p, b, xv, Mode::Train).unwrap();
        project(g, z, 43)
    };
    let rep = check_with(&ps, &f, 1e-6);
    ok &= grad_ok("encoder (train, h=1e-6)", &rep, &mut worst);
    (ok, format!("max relative error {worst:.2e} (tolerance {GRAD_TOL:.0e}), {n_params} encoder parameters"))
}

// ---------------------------------------------------------------------- DTW

fn frame_cost(a: &Envelope, i: usize, b: &Envelope, j: usize) -> f64 {
    (0..a.channels).map(|c| (a.get(c, i) - b.get(c, j)).powi(2)).sum::<f64>().sqrt()
}

/// Minimum over every monotone path from (0, 0) to the last frame pair.
fn brute_force_dtw(a: &Envelope, b: &Envelope, i: usize, j: usize) -> f64 {
    let here = frame_cost(a, i, b, j);
    if i + 1 == a.n_frames && j + 1 == b.n_frames {
        return here;
    }
    let mut best = f64::INFINITY;
    for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
        if i + di < a.n_frames && j + dj < b.n_frames {
            best = best.min(brute_force_dtw(a, b, i + di, j + dj));
        }
    }
    here + best
}

fn dtw_oracle() -> (bool, String) {
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    for _ in 0..DTW_TRIALS {
        let channels = r.gen_range(1..=2);
        let mut env = || {
            let n = r.gen_range(1..=6);
            let v: Vec<f64> = (0..n * channels).map(|_| r.gen::<f64>()).collect();
            Envelope::new(channels, v, ENVELOPE_FRAME).unwrap()
        };
        let (a, b) = (env(), env());
        let got = dtw_distance(&a, &b).unwrap().distance;
        worst = worst.max((got - brute_force_dtw(&a, &b, 0, 0)).abs());
    }
    (worst <= DTW_TOL, format!("{DTW_TRIALS} pairs, max |dp - enumeration| = {worst:.1e}"))
}

// ---------------------------------------------------------------------- DSP

fn dsp_invariants() -> (bool, String) {
    let action = ActionParams::new(vec![1.2, 1.4, 1.0]);
    let clip = simulate(TaskId::Swatter, &action, 3, 0.01).unwrap();
    let mel = mel_spectrogram(&condition(&clip).unwrap()).unwrap();
    let shape_ok = mel.shape() == (2, 16, 274);
    println!("   swatter clip mel shape {:?}", mel.shape());

    let mut r = rng(3);
    let noise: Vec<f32> = (0..11_025).map(|_| r.gen_range(-0.5f32..0.5)).collect();
    let x = AudioClip::new(vec![noise], 11_025).unwrap();
    let alpha = 3.0f32;
    let a = mel_spectrogram(&x).unwrap();
    let b = mel_spectrogram(&x.scaled(alpha)).unwrap();
    let scale = (alpha * alpha) as f64;
    let mut power_err = 0.0f64;
    for (u, v) in a.values.iter().zip(&b.values) {
        let expect = scale * *u as f64;
        if expect > 0.0 {
            power_err = power_err.max((*v as f64 - expect).abs() / expect);
        }
    }
    println!("   mel(3x) vs 9 mel(x): max relative error {power_err:.2e}");

    let n = 44_100;
    let tone: Vec<f32> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 6000.0 * i as f64 / 44_100.0).sin() as f32)
        .collect();
    let down = resample_down(&AudioClip::new(vec![tone], 44_100).unwrap(), 4).unwrap();
    let y = &down.channel(0)[200..down.len() - 200];
    let rms = (y.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    let db = 20.0 * (rms / (0.5f64).sqrt()).log10();
    println!("   6 kHz tone after 4x decimation: {db:.1} dB");
    (
        shape_ok && power_err < POWER_TOL && db < STOPBAND_DB,
        format!("shape {:?}, power law err {power_err:.1e}, stopband {db:.1} dB", mel.shape()),
    )
}

// ---------------------------------------------------------------- simulator

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn conditioned_envelope(clip: &AudioClip) -> Envelope {
    amplitude_envelope(&condition(clip).unwrap(), ENVELOPE_FRAME).unwrap()
}

fn simulator_invariants() -> (bool, String) {
    let mut burst_fail = 0;
    let mut burst_total = 0;
    for task in [TaskId::Rattle, TaskId::Tambourine] {
        for v in grid(0.5, 2.0, 5) {
            for a in grid(0.5, 2.0, 5) {
                for c in 1..=5 {
                    let clip = simulate(task, &ActionParams::new(vec![v, a, c as f64]), 7, 0.0).unwrap();
                    burst_total += 1;
                    if count_bursts(&conditioned_envelope(&clip), 0.05) != 2 * c {
                        burst_fail += 1;
                    }
                }
            }
        }
    }
    println!("   burst count = 2 x oscillations: {} of {burst_total} grid points", burst_total - burst_fail);

    let ratios: Vec<f64> = grid(0.5, 2.0, 20)
        .into_iter()
        .map(|vb| {
            let e = simulate(TaskId::Swatter, &ActionParams::new(vec![vb, 1.2, 1.2]), 7, 0.0)
                .unwrap()
                .channel_energy();
            e[1] / (e[0] + e[1])
        })
        .collect();
    let ratio_ok = ratios.windows(2).all(|w| w[1] > w[0]);
    println!(
        "   swatter channel-energy ratio over base velocity: {:.3} .. {:.3}, monotone {ratio_ok}",
        ratios[0],
        ratios[19]
    );

    let mut rms_ok = true;
    for task in TaskId::ALL {
        let spec: ActionSpec = task.action_spec();
        for &d in &spec.velocity_dims {
            let (lo, hi) = spec.bounds[d];
            let rms: Vec<f64> = grid(lo, hi, 10)
                .into_iter()
                .map(|v| {
                    let mut x = spec.midpoint().values;
                    x[d] = v;
                    simulate(task, &spec.clip(&x), 7, 0.0).unwrap().rms()
                })
                .collect();
            let inc = rms.windows(2).all(|w| w[1] > w[0]);
            if !inc {
                println!("   RMS not increasing in {task} {}", spec.names[d]);
            }
            rms_ok &= inc;
        }
    }
    println!("   RMS strictly increasing in every velocity parameter: {rms_ok}");
    (
        burst_fail == 0 && ratio_ok && rms_ok,
        format!("bursts {}/{burst_total}, ratio monotone {ratio_ok}, RMS monotone {rms_ok}", burst_total - burst_fail),
    )
}

// --------------------------------------------------------------- experiment

fn experiment_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::for_scale(Scale::Desk);
    c.tasks = TaskId::ALL.to_vec();
    c.seeds = SEEDS.to_vec();
    c.methods = vec![Method::Random, Method::Oracle, Method::Supervised, Method::Aurl];
    c.pretrain.epochs = EPOCHS;
    c.pretrain.batch_size = BATCH;
    c.supervised.epochs = EPOCHS;
    c.supervised.batch_size = BATCH;
    c.out_dir = out.to_path_buf();
    c
}

fn pipeline_ordering(p: &mut Pipeline) -> (bool, String) {
    let report = p.report().unwrap();
    println!(
        "   {:<11} {:>10} {:>10} {:>10} {:>10}   (raw MSE, mean of {} seeds)",
        "task",
        "oracle",
        "aurl",
        "supervised",
        "random",
        SEEDS.len()
    );
    let mut order_ok = true;
    let mut wins = 0;
    for task in TaskId::ALL {
        let m = |method| report.summary_for(task, method).unwrap().mse_raw_mean;
        let (o, a, s, r) = (m(Method::Oracle), m(Method::Aurl), m(Method::Supervised), m(Method::Random));
        let ok = o <= a && a < r;
        order_ok &= ok;
        wins += usize::from(a < s);
        println!(
            "   {:<11} {o:>10.4} {a:>10.4} {s:>10.4} {r:>10.4}   oracle<=aurl<random {ok}, aurl<supervised {}",
            task.as_str(),
            a < s
        );
    }
    (
        order_ok && wins >= 3,
        format!("oracle <= aurl < random on every task: {order_ok}; aurl < supervised on {wins}/5 (need 3)"),
    )
}

fn low_data(dir: &Path) -> (bool, String) {
    let mut cfg = experiment_config(dir);
    cfg.seeds = vec![SEEDS[0]];
    let mut p = Pipeline::new(cfg.clone()).unwrap();
    let sweep = p.sweep().unwrap();
    let (small, large) = (cfg.sweep.slices[0], *cfg.sweep.slices.last().unwrap());
    let mut count = 0;
    println!("   {:<11} {:>8} {:>10} {:>10} {:>9}", "task", "slice", "aurl", "supervised", "rel.impr");
    for task in TaskId::ALL {
        let imp = |slice| {
            let a = sweep.mean_mse(task, slice, Method::Aurl).unwrap();
            let s = sweep.mean_mse(task, slice, Method::Supervised).unwrap();
            println!("   {:<11} {slice:>8} {a:>10.4} {s:>10.4} {:>9.3}", task.as_str(), (s - a) / s);
            (s - a) / s
        };
        for &slice in &cfg.sweep.slices {
            if slice != small && slice != large {
                imp(slice);
            }
        }
        let (i_small, i_large) = (imp(small), imp(large));
        count += usize::from(i_small > i_large);
    }
    (
        count >= 3,
        format!("improvement at {small} behaviors exceeds the one at {large} on {count}/5 tasks (need 3)"),
    )
}

fn dtw_rollout(p: &mut Pipeline) -> (bool, String) {
    let report = p.report().unwrap();
    let mut beats = 0;
    let mut centred = true;
    println!("   {:<11} {:>10} {:>10} {:>12}", "task", "aurl", "random", "ground truth");
    for task in TaskId::ALL {
        let d = |m| report.summary_for(task, m).unwrap().dtw_normalized_mean.unwrap();
        let (a, r) = (d(Method::Aurl), d(Method::Random));
        let gt = report.dtw_ground_truth.iter().find(|g| g.task == task).unwrap().dtw_normalized_mean;
        beats += usize::from(a < r);
        centred &= gt.abs() <= 0.5;
        println!("   {:<11} {a:>10.3} {r:>10.3} {gt:>12.3}", task.as_str());
    }
    (
        beats == 5 && centred,
        format!("aurl < random on {beats}/5; ground truth within [-0.5, 0.5]: {centred}"),
    )
}

fn mixup_ablation(p: &mut Pipeline) -> (bool, String) {
    let seed = SEEDS[0];
    let mut count = 0;
    println!("   {:<11} {:>10} {:>10}   (raw MSE, seed {seed})", "task", "crop", "crop+mixup");
    for task in TaskId::ALL {
        let crop = p.evaluate(task, Method::Aurl, seed).unwrap().mse_raw;
        let mix = p.evaluate(task, Method::AurlMixup, seed).unwrap().mse_raw;
        count += usize::from(mix >= crop);
        println!("   {:<11} {crop:>10.4} {mix:>10.4}", task.as_str());
    }
    (count >= 3, format!("mixup probe MSE >= crop-only probe MSE on {count}/5 tasks (need 3)"))
}

fn tiny_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::for_scale(Scale::Desk);
    c.tasks = vec![TaskId::Tambourine, TaskId::StrikeH];
    c.seeds = vec![5];
    c.methods = vec![Method::Random, Method::Oracle, Method::Supervised, Method::Aurl];
    c.dataset.n_behaviors = 12;
    c.dataset.repeats = 2;
    c.pretrain.epochs = 2;
    c.pretrain.batch_size = 8;
    c.supervised.epochs = 2;
    c.supervised.batch_size = 8;
    c.probe.epochs = 50;
    c.eval.dtw_repeats = 3;
    c.out_dir = out.to_path_buf();
    c.deterministic = true;
    c
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> (bool, String) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    sonact::harness::run_pipeline(&tiny_config(a.path())).unwrap();
    sonact::harness::run_pipeline(&tiny_config(b.path())).unwrap();
    let ra = std::fs::read(a.path().join("report.json")).unwrap();
    let rb = std::fs::read(b.path().join("report.json")).unwrap();
    let reports_equal = ra == rb;
    println!("   report.json: {} bytes, identical {reports_equal}", ra.len());

    let opts = GenerateOptions {
        n_behaviors: 8,
        repeats: 2,
        noise_level: 0.01,
        master_seed: 77,
        overwrite: false,
    };
    generate_dataset(TaskId::Swatter, &opts, &a.path().join("gen")).unwrap();
    generate_dataset(TaskId::Swatter, &opts, &b.path().join("gen")).unwrap();
    let ga = dir_bytes(&a.path().join("gen"));
    let data_equal = ga == dir_bytes(&b.path().join("gen"));
    println!("   regenerated dataset: {} files, identical {data_equal}", ga.len());
    (
        reports_equal && data_equal,
        format!("reports identical {reports_equal}, dataset regeneration identical {data_equal}"),
    )
}

/// Least squares with a bias column through the normal equations, in f64.
fn normal_equation_loss(z: &Tensor<f32>, y: &[Vec<f64>]) -> f64 {
    let (n, d) = (z.shape()[0], z.shape()[1]);
    let k = d + 1;
    let row = |i: usize| -> Vec<f64> {
        let mut r: Vec<f64> = z.row(i).iter().map(|&v| v as f64).collect();
        r.push(1.0);
        r
    };
    let out = y[0].len();
    let mut a = vec![0.0; k * k];
    let mut rhs = vec![0.0; k * out];
    for i in 0..n {
        let x = row(i);
        for p in 0..k {
            for q in 0..k {
                a[p * k + q] += x[p] * x[q];
            }
            for c in 0..out {
                rhs[p * out + c] += x[p] * y[i][c];
            }
        }
    }
    // Gauss-Jordan with partial pivoting; a tiny ridge keeps dead units solvable.
    let trace: f64 = (0..k).map(|p| a[p * k + p]).sum();
    for p in 0..k {
        a[p * k + p] += 1e-12 * trace / k as f64;
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs())).unwrap();
        for c in 0..k {
            a.swap(col * k + c, piv * k + c);
        }
        for c in 0..out {
            rhs.swap(col * out + c, piv * out + c);
        }
        let inv = 1.0 / a[col * k + col];
        for r in 0..k {
            if r == col {
                continue;
            }
            let f = a[r * k + col] * inv;
            if f == 0.0 {
                continue;
            }
            for c in 0..k {
                a[r * k + c] -= f * a[col * k + c];
            }
            for c in 0..out {
                rhs[r * out + c] -= f * rhs[col * out + c];
            }
        }
    }
    let beta: Vec<f64> = (0..k * out).map(|i| rhs[i] / a[(i / out) * k + i / out]).collect();
    let mut loss = 0.0;
    for i in 0..n {
        let x = row(i);
        for c in 0..out {
            let pred: f64 = (0..k).map(|p| x[p] * beta[p * out + c]).sum();
            loss += (pred - y[i][c]).powi(2);
        }
    }
    loss / n as f64
}

fn probe_optimality(p: &mut Pipeline) -> (bool, String) {
    let cfg = p.config().clone();
    let mut worst = 0.0f64;
    for task in TaskId::ALL {
        let encoder = p.encoder(task, Method::Aurl, SEEDS[0]).unwrap();
        let (ds, _) = p.dataset(task, cfg.dataset.n_behaviors).unwrap();
        let normalizer = ds.normalizer(&ds.train).unwrap();
        let set = ds.spec_set(&ds.train, &encoder.stats, encoder.in_channels()).unwrap();
        let reps = encoder.represent(&set.all()).unwrap();
        let targets: Vec<Vec<f64>> = ds.actions(&ds.train).iter().map(|a| normalizer.normalize(a)).collect();
        let (_, fit) = fit_probe(&reps, &targets, &cfg.probe_for(SEEDS[0])).unwrap();
        let ls = normal_equation_loss(&reps, &targets);
        let gap = (fit.final_loss - ls) / ls;
        worst = worst.max(gap);
        println!("   {:<11} probe {:.6}  least squares {ls:.6}  gap {:+.3}%", task.as_str(), fit.final_loss, 100.0 * gap);
    }
    (worst < PROBE_GAP, format!("largest gap to the normal-equations loss {:+.3}% (limit 1%)", 100.0 * worst))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let keep = std::env::var_os("SONACT_ACCEPTANCE_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().unwrap();
    let dir = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    println!("acceptance run: desk scale, {EPOCHS} epochs, batch {BATCH}, seeds {SEEDS:?}, outputs in {}", dir.display());
    let t0 = Instant::now();
    let mut out = Vec::new();
    criterion(&mut out, 1, "gradient oracle", gradient_oracle);
    criterion(&mut out, 2, "DTW oracle", dtw_oracle);
    criterion(&mut out, 3, "DSP invariants", dsp_invariants);
    criterion(&mut out, 4, "simulator invariants", simulator_invariants);
    let mut p = Pipeline::new(experiment_config(&dir)).unwrap();
    criterion(&mut out, 5, "pipeline ordering", || pipeline_ordering(&mut p));
    criterion(&mut out, 6, "low-data advantage", || low_data(&dir));
    criterion(&mut out, 7, "DTW rollout", || dtw_rollout(&mut p));
    criterion(&mut out, 8, "mixup ablation direction", || mixup_ablation(&mut p));
    criterion(&mut out, 9, "determinism", determinism);
    criterion(&mut out, 10, "probe optimality", || probe_optimality(&mut p));

    println!("\nacceptance summary ({:.0}s total)", t0.elapsed().as_secs_f64());
    for o in &out {
        let status = match (o.pass, KNOWN_SHORTFALLS.contains(&o.id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known shortfall)",
            (false, false) => "FAIL",
        };
        println!("criterion {:>2} {status:<22} {:<26} {:>7.1}s  {}", o.id, o.name, o.seconds, o.summary);
    }
    let unexpected: Vec<u8> = out
        .iter()
        .filter(|o| o.pass == KNOWN_SHORTFALLS.contains(&o.id))
        .map(|o| o.id)
        .collect();
    if !unexpected.is_empty() {
        eprintln!("criteria not matching the recorded outcome: {unexpected:?}");
        std::process::exit(1);
    }
}
