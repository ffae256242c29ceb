use std::path::Path;

use sonact::harness::{
    dtw_reference, eval_dtw_rollout, eval_mse, fit_method, ground_truth_dtw, low_data_sweep, mse_of, rollout_scores,
    run_pipeline, run_sweep, Method, PreparedDataset, RunConfig, Scale,
};
use sonact::models::{random_choice, ActionNormalizer, NormalizerMode};
use sonact::synth::{plan_manifest, ActionParams, ActionSpec, GenerateOptions, TaskId, DEFAULT_NOISE_LEVEL};
use sonact::Error;

fn tiny_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::for_scale(Scale::Desk);
    c.tasks = vec![TaskId::Rattle, TaskId::Swatter];
    c.seeds = vec![3];
    c.methods = Method::ALL.to_vec();
    c.dataset.n_behaviors = 10;
    c.dataset.repeats = 2;
    c.pretrain.epochs = 1;
    c.pretrain.batch_size = 8;
    c.supervised.epochs = 1;
    c.supervised.batch_size = 8;
    c.probe.epochs = 20;
    c.eval.dtw_repeats = 2;
    c.sweep.n_behaviors = 10;
    c.sweep.slices = vec![4, 8];
    c.out_dir = out.to_path_buf();
    c.deterministic = true;
    c
}

fn small_dataset(task: TaskId, n: u64, repeats: u32) -> PreparedDataset {
    let opts = GenerateOptions {
        n_behaviors: n,
        repeats,
        noise_level: DEFAULT_NOISE_LEVEL,
        master_seed: 11,
        overwrite: false,
    };
    PreparedDataset::build(plan_manifest(task, &opts).unwrap(), None).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn pipeline_reruns_from_cache_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny_config(a.path());
    let first = run_pipeline(&cfg).unwrap();
    let bytes = read(&a.path().join("report.json"));

    let second = run_pipeline(&cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(read(&a.path().join("report.json")), bytes);
    let timings: serde_json::Value = serde_json::from_slice(&read(&a.path().join("timings.json"))).unwrap();
    let stages = timings.as_array().unwrap();
    assert!(stages.iter().all(|s| s["cached"] == true || s["stage"].as_str().unwrap().starts_with("gen")));

    run_pipeline(&tiny_config(b.path())).unwrap();
    assert_eq!(read(&b.path().join("report.json")), bytes);
    for f in ["table_mse_raw.csv", "table_mse_normalized.csv", "table_dtw.csv", "records.csv", "mse_raw.svg"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
}

#[test]
fn report_has_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.methods = vec![Method::Random, Method::Oracle, Method::Aurl];
    run_pipeline(&cfg).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&read(&dir.path().join("report.json"))).unwrap();
    for key in ["schema_version", "config_hash", "scale", "tasks", "methods", "seeds", "records", "summary", "dtw_ground_truth"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["config_hash"], cfg.config_hash());
    let records = v["records"].as_array().unwrap();
    assert_eq!(records.len(), 2 * 3);
    for r in records {
        for key in ["task", "method", "model_kind", "variant", "seed", "n_test", "mse_raw", "mse_normalized", "dtw_normalized_mean", "stage_hash"] {
            assert!(r.get(key).is_some(), "record missing {key}");
        }
        assert!(r["mse_raw"].as_f64().unwrap().is_finite());
        assert_eq!(r["n_test"], 4);
    }
    let csv = String::from_utf8(read(&dir.path().join("table_mse_raw.csv"))).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "task,random,oracle,aurl");
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn changed_seed_reruns_under_new_hash() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.tasks = vec![TaskId::Rattle];
    cfg.methods = vec![Method::Supervised];
    let r1 = run_pipeline(&cfg).unwrap();
    cfg.seeds = vec![4];
    let r2 = run_pipeline(&cfg).unwrap();
    assert_ne!(r1.config_hash, r2.config_hash);
    assert_ne!(r1.records[0].stage_hash, r2.records[0].stage_hash);
    let models = std::fs::read_dir(dir.path().join("models"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "ckpt")
        .count();
    assert_eq!(models, 2);
}

#[test]
fn stage_failure_names_stage_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.tasks = vec![TaskId::Rattle];
    cfg.methods = vec![Method::Random];
    run_pipeline(&cfg).unwrap();
    for e in std::fs::read_dir(dir.path().join("eval")).unwrap() {
        let p = e.unwrap().path();
        if p.file_name().unwrap().to_str().unwrap().contains("-random-") {
            std::fs::remove_file(p).unwrap();
        }
    }
    let model = std::fs::read_dir(dir.path().join("models")).unwrap().next().unwrap().unwrap().path();
    std::fs::write(&model, b"not a checkpoint").unwrap();
    match run_pipeline(&cfg).unwrap_err() {
        Error::Stage { stage, hash, .. } => {
            assert!(stage.starts_with("baseline rattle-random-s3-"), "{stage}");
            assert!(model.to_str().unwrap().contains(&hash));
        }
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn invalid_config_rejected_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.sweep.slices = vec![4, 9];
    assert!(matches!(run_sweep(&cfg), Err(Error::Config(_))));
    cfg = tiny_config(dir.path());
    cfg.dataset.roots.insert(TaskId::Rattle, dir.path().join("missing"));
    assert!(matches!(run_pipeline(&cfg), Err(Error::Config(_))));
}

#[test]
fn pipeline_reads_generated_audio() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rattle-data");
    let opts = GenerateOptions {
        n_behaviors: 10,
        repeats: 2,
        noise_level: DEFAULT_NOISE_LEVEL,
        master_seed: 0,
        overwrite: false,
    };
    sonact::synth::generate_dataset(TaskId::Rattle, &opts, &data).unwrap();
    let mut cfg = tiny_config(&dir.path().join("from-disk"));
    cfg.tasks = vec![TaskId::Rattle];
    cfg.methods = vec![Method::Oracle, Method::Supervised];
    cfg.dataset.roots.insert(TaskId::Rattle, data);
    let disk = run_pipeline(&cfg).unwrap();
    cfg.dataset.roots.clear();
    cfg.out_dir = dir.path().join("in-memory");
    let mem = run_pipeline(&cfg).unwrap();
    assert_eq!(disk.records.len(), mem.records.len());
    for (a, b) in disk.records.iter().zip(&mem.records) {
        assert_eq!(a.mse_raw, b.mse_raw);
        assert_eq!(a.dtw_normalized_mean, b.dtw_normalized_mean);
    }
}

#[test]
fn sweep_files_and_nesting() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.tasks = vec![TaskId::Swatter];
    cfg.sweep.methods = vec![Method::Random, Method::Supervised];
    let rep = run_sweep(&cfg).unwrap();
    assert_eq!(rep.rows.len(), 2 * 2);
    assert_eq!(rep.rows[0].n_train_records, 4 * 2);
    assert_eq!(rep.rows[2].n_train_records, 8 * 2);
    assert!(dir.path().join("sweep.csv").exists() && dir.path().join("sweep_swatter.svg").exists());
    assert_eq!(run_sweep(&cfg).unwrap(), rep);

    let ds = small_dataset(TaskId::Swatter, 10, 2);
    let small = ds.train_slice(4).unwrap();
    let large = ds.train_slice(8).unwrap();
    assert!(small.iter().all(|i| large.contains(i)));
    assert!(ds.train_slice(9).is_err());
}

#[test]
fn full_slice_matches_a_standard_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let ds = small_dataset(TaskId::Rattle, 10, 2);
    let n = ds.manifest.split.train.len();
    for method in [Method::Aurl, Method::Supervised] {
        let rows = low_data_sweep(&ds, &[n], &[method], &cfg, 5).unwrap();
        let fit = fit_method(&ds, &ds.train, method, &cfg, 5).unwrap();
        assert_eq!(rows[0].mse_raw, eval_mse(&fit.model, &ds).unwrap().mse_raw, "{method}");
    }
    assert!(low_data_sweep(&ds, &[n + 1], &[Method::Random], &cfg, 0).is_err());
}

fn one_dim_normalizer() -> ActionNormalizer {
    ActionNormalizer {
        mode: NormalizerMode::None,
        min: vec![0.0],
        max: vec![2.0],
        spec: ActionSpec {
            task_id: TaskId::Rattle,
            dims: 1,
            bounds: vec![(0.0, 2.0)],
            names: vec!["x".into()],
            integer_dims: vec![],
            velocity_dims: vec![0],
        },
    }
}

#[test]
fn mse_examples() {
    let n = one_dim_normalizer();
    let t: Vec<ActionParams> = [0.0, 1.0, 2.0].iter().map(|&v| ActionParams::new(vec![v])).collect();
    let r = mse_of(&t, &t, &n).unwrap();
    assert_eq!((r.mse_raw, r.mse_normalized, r.n_test), (0.0, 0.0, 3));
    assert!(mse_of(&[], &[], &n).is_err());

    let train = [ActionParams::new(vec![0.0]), ActionParams::new(vec![2.0])];
    let queries = 20_000;
    let preds: Vec<ActionParams> = (0..queries).map(|i| random_choice(&train, 9, i).clone()).collect();
    let truths = vec![ActionParams::new(vec![0.0]); queries as usize];
    let r = mse_of(&preds, &truths, &n).unwrap();
    assert!((r.mse_raw - 2.0).abs() < 0.05, "{}", r.mse_raw);
}

#[test]
fn oracle_on_training_actions_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let ds = small_dataset(TaskId::StrikeV, 10, 2);
    let fit = fit_method(&ds, &ds.train, Method::Oracle, &cfg, 0).unwrap();
    let train_truths = ds.actions(&ds.train);
    let preds = fit.model.predict_specs(&ds.raw_specs(&ds.train), Some(&train_truths)).unwrap();
    assert_eq!(mse_of(&preds, &train_truths, &fit.model.normalizer).unwrap().mse_raw, 0.0);
}

#[test]
fn dtw_rollout_reference_properties() {
    let ds = small_dataset(TaskId::Swatter, 40, 2);
    let reference = dtw_reference(&ds, 5, 1).unwrap();
    assert_eq!(reference.stats.n_pairs, ds.test.len() * 5);
    let truth = ground_truth_dtw(&ds, &reference).unwrap();
    assert!(truth.abs() <= 0.5, "{truth}");
    let quiet: Vec<ActionParams> = ds
        .test
        .iter()
        .map(|_| ActionParams::new(ds.manifest.action_spec.bounds.iter().map(|b| b.0).collect()))
        .collect();
    let quiet_scores: Vec<f64> = rollout_scores(&ds, &quiet, &reference).unwrap();
    let quiet_mean = quiet_scores.iter().sum::<f64>() / quiet_scores.len() as f64;
    assert!(quiet_mean > truth + 2.0, "{quiet_mean} vs {truth}");

    let dir = tempfile::tempdir().unwrap();
    let fit = fit_method(&ds, &ds.train, Method::Random, &tiny_config(dir.path()), 2).unwrap();
    let a = eval_dtw_rollout(&fit.model, &ds, &reference).unwrap();
    let b = eval_dtw_rollout(&fit.model, &ds, &dtw_reference(&ds, 5, 1).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn eval_rejects_task_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = small_dataset(TaskId::StrikeV, 10, 1);
    let b = small_dataset(TaskId::Swatter, 10, 1);
    let fit = fit_method(&a, &a.train, Method::Random, &cfg, 0).unwrap();
    assert!(eval_mse(&fit.model, &b).is_err());
}
