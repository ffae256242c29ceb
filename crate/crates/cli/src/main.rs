use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sonact::harness::{eval_dtw_rollout, eval_mse, Method, Pipeline, RunConfig, Scale};
use sonact::models::PolicyModel;
use sonact::synth::{generate_dataset, GenerateOptions, TaskId};
use sonact::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "sonact", version, about = "Learn robot actions from contact sound")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run seed; replaces the seed list of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, value_parser = parse_scale)]
    scale: Option<Scale>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset of WAV files and its manifest.
    Gen {
        #[arg(long, value_parser = parse_task)]
        task: TaskId,
        #[arg(long)]
        behaviors: Option<u64>,
        #[arg(long)]
        repeats: Option<u32>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Self-supervised pretraining of an encoder.
    Pretrain {
        #[arg(long, value_parser = parse_task)]
        task: TaskId,
        #[arg(long, default_value = "aurl", value_parser = parse_method)]
        method: Method,
    },
    /// Linear probe on a pretrained encoder (pretrains first if needed).
    Probe {
        #[arg(long, value_parser = parse_task)]
        task: TaskId,
        #[arg(long, default_value = "aurl", value_parser = parse_method)]
        method: Method,
    },
    /// End-to-end supervised baseline.
    Supervised {
        #[arg(long, value_parser = parse_task)]
        task: TaskId,
        /// Apply the pretraining augmentation to every batch.
        #[arg(long)]
        augment: bool,
    },
    /// Random or oracle reference policy.
    Baseline {
        #[arg(long, value_parser = parse_task)]
        task: TaskId,
        #[arg(long, value_parser = parse_method)]
        kind: Method,
    },
    /// Action MSE and DTW rollout score of one policy.
    Eval {
        #[arg(long, value_parser = parse_task)]
        task: TaskId,
        #[arg(long, value_parser = parse_method, conflicts_with = "model")]
        method: Option<Method>,
        /// A policy checkpoint to evaluate instead of a pipeline method.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Low-data sweep over nested training slices.
    Sweep {
        #[arg(long, value_parser = parse_task)]
        task: Vec<TaskId>,
    },
    /// Run every stage and write the report.
    Report {
        #[arg(long, value_parser = parse_task)]
        task: Vec<TaskId>,
    },
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_task(s: &str) -> Result<TaskId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn config(g: &Global, tasks: &[TaskId]) -> Result<RunConfig, Error> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path, g.scale)?,
        None => RunConfig::for_scale(g.scale.unwrap_or(Scale::Desk)),
    };
    if let Some(seed) = g.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &g.out {
        cfg.out_dir = out.clone();
    }
    if g.deterministic {
        cfg.deterministic = true;
    }
    if !tasks.is_empty() {
        cfg.tasks = tasks.to_vec();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(v: serde_json::Value) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let g = &cli.global;
    match cli.command {
        Command::Gen {
            task,
            behaviors,
            repeats,
            overwrite,
        } => {
            let cfg = config(g, &[task])?;
            let opts = GenerateOptions {
                n_behaviors: behaviors.unwrap_or(cfg.dataset.n_behaviors),
                repeats: repeats.unwrap_or(cfg.dataset.repeats),
                noise_level: cfg.dataset.noise_level,
                master_seed: g.seed.unwrap_or(cfg.dataset.master_seed),
                overwrite,
            };
            let dir = cfg.out_dir.join("datasets").join(task.as_str());
            let m = generate_dataset(task, &opts, &dir)?;
            println!("{} records -> {}", m.records.len(), dir.join("manifest.json").display());
        }
        Command::Pretrain { task, method } => {
            let cfg = config(g, &[task])?;
            let seeds = cfg.seeds.clone();
            let mut p = Pipeline::new(cfg)?;
            for seed in seeds {
                let state = p.encoder(task, method, seed)?;
                println!("{task} {method} seed {seed}: encoder with {} parameters", state.online.len());
            }
        }
        Command::Probe { task, method } => {
            if method.pretraining().is_none() {
                return Err(Error::Config(format!("{method} is not a probe method")));
            }
            policies(g, task, method)?;
        }
        Command::Supervised { task, augment } => {
            let m = if augment { Method::SupervisedAug } else { Method::Supervised };
            policies(g, task, m)?;
        }
        Command::Baseline { task, kind } => {
            if !matches!(kind, Method::Random | Method::Oracle) {
                return Err(Error::Config(format!("baseline kind must be random or oracle, got {kind}")));
            }
            policies(g, task, kind)?;
        }
        Command::Eval { task, method, model } => {
            let cfg = config(g, &[task])?;
            let seeds = cfg.seeds.clone();
            let n = cfg.dataset.n_behaviors;
            let dtw = cfg.eval.dtw;
            let mut p = Pipeline::new(cfg)?;
            match (method, model) {
                (_, Some(path)) => {
                    let model = PolicyModel::load(&path)?;
                    let reference = if dtw { Some(p.dtw_reference(task)?) } else { None };
                    let (ds, _) = p.dataset(task, n)?;
                    let mse = eval_mse(&model, &ds)?;
                    let dtw = reference.map(|r| eval_dtw_rollout(&model, &ds, &r)).transpose()?;
                    print_json(serde_json::json!({
                        "task": task,
                        "model": path,
                        "model_kind": model.kind.as_str(),
                        "n_test": mse.n_test,
                        "mse_raw": mse.mse_raw,
                        "mse_normalized": mse.mse_normalized,
                        "dtw_normalized_mean": dtw,
                    }))?;
                }
                (Some(m), None) => {
                    for seed in seeds {
                        print_json(serde_json::to_value(p.evaluate(task, m, seed)?)?)?;
                    }
                }
                (None, None) => return Err(Error::Config("eval needs --method or --model".into())),
            }
        }
        Command::Sweep { task } => {
            let cfg = config(g, &task)?;
            let out = cfg.out_dir.clone();
            sonact::harness::run_sweep(&cfg)?;
            println!("sweep written to {}", out.join("sweep.json").display());
        }
        Command::Report { task } => {
            let cfg = config(g, &task)?;
            let out = cfg.out_dir.clone();
            let report = sonact::harness::run_pipeline(&cfg)?;
            for r in &report.summary {
                println!(
                    "{:<11} {:<15} mse_raw {:>10.4} ± {:<8.4} dtw {}",
                    r.task.as_str(),
                    r.method.as_str(),
                    r.mse_raw_mean,
                    r.mse_raw_std,
                    r.dtw_normalized_mean.map_or("-".into(), |d| format!("{d:.3}"))
                );
            }
            println!("report written to {}", out.join("report.json").display());
        }
    }
    Ok(())
}

fn policies(g: &Global, task: TaskId, method: Method) -> Result<(), Error> {
    let cfg = config(g, &[task])?;
    let seeds = cfg.seeds.clone();
    let mut p = Pipeline::new(cfg)?;
    for seed in seeds {
        let m = p.policy(task, method, seed)?;
        println!("{task} {method} seed {seed}: {} policy ready", m.kind.as_str());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_STAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.global.deterministic {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
