use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{content_hash, Method, RunConfig, Scale};
use super::data::PreparedDataset;
use super::experiment::{fit_direct, fit_probe_policy, pretrain_encoder, pretrain_pooled, POOLED_CHANNELS};
use super::metrics::{dtw_reference, eval_dtw_rollout, eval_mse, ground_truth_dtw, DtwReference};
use super::plot::{grouped_bar_svg, line_svg};
use crate::error::{Error, Result};
use crate::models::PolicyModel;
use crate::nn::EncoderState;
use crate::ssl::write_loss_trace;
use crate::synth::{plan_manifest, write_bytes_atomic, write_json_atomic, DatasetManifest, GenerateOptions, TaskId};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Metrics of one (task, method, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task: TaskId,
    pub method: Method,
    pub model_kind: String,
    pub variant: Option<String>,
    pub seed: u64,
    pub n_test: usize,
    pub mse_raw: f64,
    pub mse_normalized: f64,
    pub dtw_normalized_mean: Option<f64>,
    pub stage_hash: String,
}

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: TaskId,
    pub method: Method,
    pub n_seeds: usize,
    pub mse_raw_mean: f64,
    pub mse_raw_std: f64,
    pub mse_normalized_mean: f64,
    pub mse_normalized_std: f64,
    pub dtw_normalized_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub task: TaskId,
    pub dtw_normalized_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub scale: Scale,
    pub tasks: Vec<TaskId>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub records: Vec<EvalRecord>,
    pub summary: Vec<SummaryRow>,
    pub dtw_ground_truth: Vec<GroundTruthRow>,
}

impl EvalReport {
    pub fn summary_for(&self, task: TaskId, method: Method) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.task == task && r.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub task: TaskId,
    pub slice: usize,
    pub method: Method,
    pub seed: u64,
    pub n_train_records: usize,
    pub n_test: usize,
    pub mse_raw: f64,
    pub mse_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub slices: Vec<usize>,
    pub methods: Vec<Method>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Mean raw MSE over seeds.
    pub fn mean_mse(&self, task: TaskId, slice: usize, method: Method) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.task == task && r.slice == slice && r.method == method)
            .map(|r| r.mse_raw)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Wall time of one stage; kept out of the reports so they stay reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub hash: String,
    pub seconds: f64,
    pub cached: bool,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// Runs and caches pipeline stages. Every output file name carries the hash
/// of everything it depends on, so an existing file is reused as is.
pub struct Pipeline {
    cfg: RunConfig,
    out: PathBuf,
    datasets: BTreeMap<(TaskId, u64), (Arc<PreparedDataset>, String)>,
    manifests: BTreeMap<(TaskId, u64), (DatasetManifest, String)>,
    timings: Vec<StageTiming>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out_dir.clone();
        for sub in ["data", "encoders", "models", "eval", "sweep"] {
            mkdir(&out.join(sub))?;
        }
        Ok(Self {
            cfg,
            out,
            datasets: BTreeMap::new(),
            manifests: BTreeMap::new(),
            timings: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn timings(&self) -> &[StageTiming] {
        &self.timings
    }

    fn run_stage<T>(&mut self, stage: String, hash: &str, cached: bool, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self).map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.clone(),
                hash: hash.to_string(),
                source: Box::new(e),
            },
        })?;
        log::info!("{stage} [{hash}] {}", if cached { "cached" } else { "done" });
        self.timings.push(StageTiming {
            stage,
            hash: hash.to_string(),
            seconds: t.elapsed().as_secs_f64(),
            cached,
        });
        Ok(out)
    }

    /// Manifest of a task dataset with `n_behaviors` (`gen` stage).
    pub fn manifest(&mut self, task: TaskId, n_behaviors: u64) -> Result<(DatasetManifest, String)> {
        if let Some(m) = self.manifests.get(&(task, n_behaviors)) {
            return Ok(m.clone());
        }
        let root = (n_behaviors == self.cfg.dataset.n_behaviors)
            .then(|| self.cfg.dataset.roots.get(&task).cloned())
            .flatten();
        let d = &self.cfg.dataset;
        let opts = GenerateOptions {
            n_behaviors,
            repeats: d.repeats,
            noise_level: d.noise_level,
            master_seed: d.master_seed,
            overwrite: false,
        };
        let key_hash = content_hash(&(task, n_behaviors, d.repeats, d.noise_level, d.master_seed, &root));
        let stage = format!("gen {task} n={n_behaviors}");
        let out = self.run_stage(stage, &key_hash, false, |p| {
            let manifest = match &root {
                Some(dir) => read_json::<DatasetManifest>(&dir.join("manifest.json"))?,
                None => plan_manifest(task, &opts)?,
            };
            manifest.validate()?;
            let hash = content_hash(&manifest);
            let path = p.out.join("data").join(format!("{task}-n{n_behaviors}-{hash}.json"));
            if !path.exists() {
                write_json_atomic(&path, &manifest)?;
            }
            Ok((manifest, hash))
        })?;
        self.manifests.insert((task, n_behaviors), out.clone());
        Ok(out)
    }

    /// Front-end features of a task dataset, built once per pipeline.
    pub fn dataset(&mut self, task: TaskId, n_behaviors: u64) -> Result<(Arc<PreparedDataset>, String)> {
        if let Some(d) = self.datasets.get(&(task, n_behaviors)) {
            return Ok(d.clone());
        }
        let (manifest, hash) = self.manifest(task, n_behaviors)?;
        let root = (n_behaviors == self.cfg.dataset.n_behaviors)
            .then(|| self.cfg.dataset.roots.get(&task).cloned())
            .flatten();
        let ds = self.run_stage(format!("features {task}"), &hash, false, |_| {
            PreparedDataset::build(manifest, root.as_deref())
        })?;
        let entry = (Arc::new(ds), hash);
        self.datasets.insert((task, n_behaviors), entry.clone());
        Ok(entry)
    }

    fn data_hash(&mut self, task: TaskId) -> Result<String> {
        Ok(self.manifest(task, self.cfg.dataset.n_behaviors)?.1)
    }

    fn encoder_key(&mut self, task: TaskId, method: Method, seed: u64) -> Result<(String, String)> {
        let pcfg = self.cfg.pretrain_for(method, seed);
        if method == Method::AurlAll {
            let tasks = self.cfg.tasks.clone();
            let hashes: Vec<String> = tasks.iter().map(|&t| self.data_hash(t)).collect::<Result<_>>()?;
            let h = content_hash(&(&hashes, self.cfg.encoder_for(POOLED_CHANNELS), &pcfg));
            Ok((format!("all-{method}-s{seed}-{h}"), h))
        } else {
            let dh = self.data_hash(task)?;
            let h = content_hash(&(&dh, self.cfg.encoder_for(task.channels()), &pcfg));
            Ok((format!("{task}-{method}-s{seed}-{h}"), h))
        }
    }

    /// Pretrained encoder of a probe-based method (`pretrain` stage).
    pub fn encoder(&mut self, task: TaskId, method: Method, seed: u64) -> Result<EncoderState> {
        if method.pretraining().is_none() {
            return Err(Error::Config(format!("{method} has no encoder to pretrain")));
        }
        let (name, hash) = self.encoder_key(task, method, seed)?;
        let path = self.out.join("encoders").join(format!("{name}.ckpt"));
        let cached = path.exists();
        self.run_stage(format!("pretrain {name}"), &hash, cached, |p| {
            if cached {
                return EncoderState::load(&path);
            }
            let out = if method == Method::AurlAll {
                let mut sets = Vec::new();
                for t in p.cfg.tasks.clone() {
                    sets.push(p.dataset(t, p.cfg.dataset.n_behaviors)?.0);
                }
                let parts: Vec<(&PreparedDataset, &[usize])> = sets.iter().map(|d| (&**d, d.train.as_slice())).collect();
                pretrain_pooled(&parts, &p.cfg, seed)?
            } else {
                let (ds, _) = p.dataset(task, p.cfg.dataset.n_behaviors)?;
                pretrain_encoder(&ds, &ds.train, method, &p.cfg, seed)?
            };
            write_loss_trace(&path.with_extension("loss.csv"), &out.trace)?;
            out.state.save(&path)?;
            Ok(out.state)
        })
    }

    fn policy_key(&mut self, task: TaskId, method: Method, seed: u64) -> Result<String> {
        let upstream = if method.pretraining().is_some() {
            self.encoder_key(task, method, seed)?.1
        } else {
            self.data_hash(task)?
        };
        let stage_cfg = match method {
            m if m.pretraining().is_some() => serde_json::to_value(self.cfg.probe_for(seed))?,
            Method::Supervised | Method::SupervisedAug => serde_json::to_value((
                self.cfg.encoder_for(task.channels()),
                self.cfg.supervised_for(method, seed),
            ))?,
            _ => serde_json::Value::Null,
        };
        Ok(content_hash(&(upstream, method, seed, stage_cfg)))
    }

    /// Trained policy (`probe`, `supervised` or `baseline` stage).
    pub fn policy(&mut self, task: TaskId, method: Method, seed: u64) -> Result<PolicyModel> {
        let hash = self.policy_key(task, method, seed)?;
        let name = format!("{task}-{method}-s{seed}-{hash}");
        let path = self.out.join("models").join(format!("{name}.ckpt"));
        let cached = path.exists();
        let stage = match method {
            m if m.pretraining().is_some() => "probe",
            Method::Supervised | Method::SupervisedAug => "supervised",
            _ => "baseline",
        };
        self.run_stage(format!("{stage} {name}"), &hash, cached, |p| {
            if cached {
                return PolicyModel::load(&path);
            }
            let (ds, _) = p.dataset(task, p.cfg.dataset.n_behaviors)?;
            let model = if method.pretraining().is_some() {
                let enc = p.encoder(task, method, seed)?;
                fit_probe_policy(&ds, &ds.train, enc, &p.cfg, seed)?.0
            } else {
                let fit = fit_direct(&ds, &ds.train, method, &p.cfg, seed)?;
                if !fit.train_trace.is_empty() {
                    let mut csv = String::from("epoch,loss\n");
                    for (e, l) in fit.train_trace.iter().enumerate() {
                        let _ = writeln!(csv, "{},{l}", e + 1);
                    }
                    write_bytes_atomic(&path.with_extension("loss.csv"), csv.as_bytes())?;
                }
                fit.model
            };
            model.save(&path)?;
            Ok(model)
        })
    }

    /// DTW normalization of a task (`eval` stage).
    pub fn dtw_reference(&mut self, task: TaskId) -> Result<DtwReference> {
        let dh = self.data_hash(task)?;
        let e = &self.cfg.eval;
        let hash = content_hash(&(dh, e.dtw_repeats, e.seed));
        let path = self.out.join("eval").join(format!("{task}-dtwref-{hash}.json"));
        let cached = path.exists();
        self.run_stage(format!("dtw reference {task}"), &hash, cached, |p| {
            if cached {
                return read_json(&path);
            }
            let (ds, _) = p.dataset(task, p.cfg.dataset.n_behaviors)?;
            let r = dtw_reference(&ds, p.cfg.eval.dtw_repeats, p.cfg.eval.seed)?;
            write_json_atomic(&path, &r)?;
            Ok(r)
        })
    }

    /// Ground-truth re-simulation score of a task.
    pub fn ground_truth_dtw(&mut self, task: TaskId) -> Result<f64> {
        let reference = self.dtw_reference(task)?;
        let hash = content_hash(&(self.data_hash(task)?, &reference));
        let path = self.out.join("eval").join(format!("{task}-dtwtruth-{hash}.json"));
        let cached = path.exists();
        self.run_stage(format!("dtw ground truth {task}"), &hash, cached, |p| {
            if cached {
                return read_json(&path);
            }
            let (ds, _) = p.dataset(task, p.cfg.dataset.n_behaviors)?;
            let v = ground_truth_dtw(&ds, &reference)?;
            write_json_atomic(&path, &v)?;
            Ok(v)
        })
    }

    /// Metrics of one trained policy (`eval` stage).
    pub fn evaluate(&mut self, task: TaskId, method: Method, seed: u64) -> Result<EvalRecord> {
        let ph = self.policy_key(task, method, seed)?;
        let hash = content_hash(&(ph, &self.cfg.eval));
        let name = format!("{task}-{method}-s{seed}-{hash}");
        let path = self.out.join("eval").join(format!("{name}.json"));
        let cached = path.exists();
        self.run_stage(format!("eval {name}"), &hash.clone(), cached, |p| {
            if cached {
                return read_json(&path);
            }
            let model = p.policy(task, method, seed)?;
            let reference = if p.cfg.eval.dtw {
                Some(p.dtw_reference(task)?)
            } else {
                None
            };
            let (ds, _) = p.dataset(task, p.cfg.dataset.n_behaviors)?;
            let mse = eval_mse(&model, &ds)?;
            let dtw = reference.map(|r| eval_dtw_rollout(&model, &ds, &r)).transpose()?;
            let rec = EvalRecord {
                task,
                method,
                model_kind: model.kind.as_str().into(),
                variant: method.pretraining().map(|(v, mixup)| {
                    if mixup {
                        format!("{}+mixup", v.as_str())
                    } else {
                        v.as_str().into()
                    }
                }),
                seed,
                n_test: mse.n_test,
                mse_raw: mse.mse_raw,
                mse_normalized: mse.mse_normalized,
                dtw_normalized_mean: dtw,
                stage_hash: hash,
            };
            write_json_atomic(&path, &rec)?;
            Ok(rec)
        })
    }

    /// Evaluates every (task, method, seed) and writes the report files.
    pub fn report(&mut self) -> Result<EvalReport> {
        let cfg = self.cfg.clone();
        let mut records = Vec::new();
        for &task in &cfg.tasks {
            for &method in &cfg.methods {
                for &seed in &cfg.seeds {
                    records.push(self.evaluate(task, method, seed)?);
                }
            }
        }
        let mut dtw_ground_truth = Vec::new();
        if cfg.eval.dtw {
            for &task in &cfg.tasks {
                dtw_ground_truth.push(GroundTruthRow {
                    task,
                    dtw_normalized_mean: self.ground_truth_dtw(task)?,
                });
            }
        }
        let mut summary = Vec::new();
        for &task in &cfg.tasks {
            for &method in &cfg.methods {
                let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.task == task && r.method == method).collect();
                let raw: Vec<f64> = rs.iter().map(|r| r.mse_raw).collect();
                let norm: Vec<f64> = rs.iter().map(|r| r.mse_normalized).collect();
                let dtw: Option<Vec<f64>> = rs.iter().map(|r| r.dtw_normalized_mean).collect();
                let (raw_m, raw_s) = mean_std(&raw);
                let (norm_m, norm_s) = mean_std(&norm);
                summary.push(SummaryRow {
                    task,
                    method,
                    n_seeds: rs.len(),
                    mse_raw_mean: raw_m,
                    mse_raw_std: raw_s,
                    mse_normalized_mean: norm_m,
                    mse_normalized_std: norm_s,
                    dtw_normalized_mean: dtw.map(|d| mean_std(&d).0),
                });
            }
        }
        let report = EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash: cfg.config_hash(),
            scale: cfg.scale,
            tasks: cfg.tasks.clone(),
            methods: cfg.methods.clone(),
            seeds: cfg.seeds.clone(),
            records,
            summary,
            dtw_ground_truth,
        };
        write_report_files(&self.out, &report)?;
        self.write_timings()?;
        Ok(report)
    }

    /// Low-data sweep over nested training slices of the sweep dataset.
    pub fn sweep(&mut self) -> Result<SweepReport> {
        let cfg = self.cfg.clone();
        let mut rows = Vec::new();
        for &task in &cfg.tasks {
            let (_, dh) = self.manifest(task, cfg.sweep.n_behaviors)?;
            for &slice in &cfg.sweep.slices {
                for &method in &cfg.sweep.methods {
                    for &seed in &cfg.seeds {
                        let stage_cfg = (
                            &dh,
                            slice,
                            method,
                            seed,
                            cfg.encoder_for(task.channels()),
                            cfg.pretrain_for(method, seed),
                            cfg.probe_for(seed),
                            cfg.supervised_for(method, seed),
                        );
                        let hash = content_hash(&stage_cfg);
                        let name = format!("{task}-{method}-n{slice}-s{seed}-{hash}");
                        let path = self.out.join("sweep").join(format!("{name}.json"));
                        let cached = path.exists();
                        let row = self.run_stage(format!("sweep {name}"), &hash, cached, |p| {
                            if cached {
                                return read_json(&path);
                            }
                            let (ds, _) = p.dataset(task, cfg.sweep.n_behaviors)?;
                            let row = super::sweep::sweep_cell(&ds, slice, method, &p.cfg, seed)?;
                            write_json_atomic(&path, &row)?;
                            Ok(row)
                        })?;
                        rows.push(row);
                    }
                }
            }
        }
        let report = SweepReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash: cfg.config_hash(),
            slices: cfg.sweep.slices.clone(),
            methods: cfg.sweep.methods.clone(),
            rows,
        };
        write_sweep_files(&self.out, &report, &cfg.tasks)?;
        self.write_timings()?;
        Ok(report)
    }

    fn write_timings(&self) -> Result<()> {
        write_json_atomic(&self.out.join("timings.json"), &self.timings)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `report.json`, CSV tables and an SVG chart under `out`.
pub fn write_report_files(out: &Path, report: &EvalReport) -> Result<()> {
    write_json_atomic(&out.join("report.json"), report)?;
    let header = std::iter::once("task".to_string())
        .chain(report.methods.iter().map(|m| m.to_string()))
        .collect::<Vec<_>>()
        .join(",");
    let table = |f: &dyn Fn(&SummaryRow) -> String, extra: Option<&dyn Fn(TaskId) -> String>| {
        let mut s = header.clone();
        if extra.is_some() {
            s.push_str(",ground_truth");
        }
        s.push('\n');
        for &task in &report.tasks {
            s.push_str(task.as_str());
            for &m in &report.methods {
                s.push(',');
                s.push_str(&report.summary_for(task, m).map(f).unwrap_or_default());
            }
            if let Some(e) = extra {
                s.push(',');
                s.push_str(&e(task));
            }
            s.push('\n');
        }
        s
    };
    write_bytes_atomic(
        &out.join("table_mse_raw.csv"),
        table(&|r| format!("{:.6}", r.mse_raw_mean), None).as_bytes(),
    )?;
    write_bytes_atomic(
        &out.join("table_mse_normalized.csv"),
        table(&|r| format!("{:.6}", r.mse_normalized_mean), None).as_bytes(),
    )?;
    if !report.dtw_ground_truth.is_empty() {
        let gt = |t: TaskId| {
            fmt_opt(
                report
                    .dtw_ground_truth
                    .iter()
                    .find(|g| g.task == t)
                    .map(|g| g.dtw_normalized_mean),
            )
        };
        write_bytes_atomic(
            &out.join("table_dtw.csv"),
            table(&|r| fmt_opt(r.dtw_normalized_mean), Some(&gt)).as_bytes(),
        )?;
    }
    let mut long = String::from("task,method,seed,n_test,mse_raw,mse_normalized,dtw_normalized_mean\n");
    for r in &report.records {
        let _ = writeln!(
            long,
            "{},{},{},{},{:.6},{:.6},{}",
            r.task,
            r.method,
            r.seed,
            r.n_test,
            r.mse_raw,
            r.mse_normalized,
            fmt_opt(r.dtw_normalized_mean)
        );
    }
    write_bytes_atomic(&out.join("records.csv"), long.as_bytes())?;
    let series: Vec<String> = report.methods.iter().map(|m| m.to_string()).collect();
    let groups: Vec<(String, Vec<f64>)> = report
        .tasks
        .iter()
        .map(|&t| {
            let v = report
                .methods
                .iter()
                .map(|&m| report.summary_for(t, m).map_or(f64::NAN, |r| r.mse_raw_mean))
                .collect();
            (t.to_string(), v)
        })
        .collect();
    write_bytes_atomic(
        &out.join("mse_raw.svg"),
        grouped_bar_svg("Action MSE (raw units, mean over seeds)", &series, &groups).as_bytes(),
    )
}

pub fn write_sweep_files(out: &Path, report: &SweepReport, tasks: &[TaskId]) -> Result<()> {
    write_json_atomic(&out.join("sweep.json"), report)?;
    let mut csv = String::from("task,slice,method,seed,n_train_records,n_test,mse_raw,mse_normalized\n");
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{:.6},{:.6}",
            r.task, r.slice, r.method, r.seed, r.n_train_records, r.n_test, r.mse_raw, r.mse_normalized
        );
    }
    write_bytes_atomic(&out.join("sweep.csv"), csv.as_bytes())?;
    let xs: Vec<f64> = report.slices.iter().map(|&s| s as f64).collect();
    for &task in tasks {
        let series: Vec<(String, Vec<f64>)> = report
            .methods
            .iter()
            .map(|&m| {
                let v = report
                    .slices
                    .iter()
                    .map(|&s| report.mean_mse(task, s, m).unwrap_or(f64::NAN))
                    .collect();
                (m.to_string(), v)
            })
            .collect();
        let svg = line_svg(&format!("{task}: MSE vs training behaviors"), "training behaviors", "MSE (raw)", &xs, &series);
        write_bytes_atomic(&out.join(format!("sweep_{task}.svg")), svg.as_bytes())?;
    }
    Ok(())
}

fn in_pool<T: Send>(deterministic: bool, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if !deterministic {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Every stage from dataset planning to the report. Existing stage outputs
/// with matching hashes are reused.
pub fn run_pipeline(cfg: &RunConfig) -> Result<EvalReport> {
    let cfg = cfg.clone();
    in_pool(cfg.deterministic, move || Pipeline::new(cfg)?.report())
}

pub fn run_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    let cfg = cfg.clone();
    in_pool(cfg.deterministic, move || Pipeline::new(cfg)?.sweep())
}
