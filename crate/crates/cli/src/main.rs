use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use metasage_cli::{execute, RunConfig};
use metasage_core::adapt::AdaptMode;
use metasage_core::domain::Task;

/// Neural routing solver with test-time adaptation and scale meta-learning.
#[derive(Parser)]
#[command(name = "metasage", version)]
struct Cli {
    /// TOML config file; flags and METASAGE_* variables override it.
    #[arg(long, global = true, env = "METASAGE_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "METASAGE_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "METASAGE_SEED")]
    seed: Option<u64>,
    /// tsp, cvrp, pctsp or op.
    #[arg(long, global = true, env = "METASAGE_TASK")]
    task: Option<Task>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "METASAGE_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random instances.
    Gen(GenArgs),
    /// Pretrain the base policy.
    Pretrain(PretrainArgs),
    /// Build distillation targets by adapting at several scales.
    Distill(DistillArgs),
    /// Train the scale meta-learner.
    TrainSml(TrainSmlArgs),
    /// Adapt to each test instance (SAGE, EAS or active search).
    Adapt(AdaptArgs),
    /// Zero-shot evaluation against a heuristic baseline.
    Eval(EvalArgs),
    /// Gap table from result files.
    Report(ReportArgs),
    /// Re-execute the command stored in a config snapshot.
    Run,
}

#[derive(Args)]
struct GenArgs {
    /// Overrides --task.
    task: Option<Task>,
    n: Option<usize>,
    count: Option<usize>,
    /// native (JSON) or lib (TSPLIB/CVRPLIB text).
    #[arg(long, env = "METASAGE_FORMAT")]
    format: Option<String>,
}

#[derive(Args)]
struct InstanceArgs {
    /// Directory of instance files; otherwise generated from --n/--count.
    #[arg(long, env = "METASAGE_INSTANCES")]
    instances: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    multistart: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct DistillArgs {
    /// Directory with policy.ckpt and model.json.
    #[arg(long, env = "METASAGE_POLICY")]
    policy: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long)]
    per_scale: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args)]
struct TrainSmlArgs {
    #[arg(long, env = "METASAGE_POLICY")]
    policy: Option<PathBuf>,
    /// Directory written by `distill`.
    #[arg(long, env = "METASAGE_RECORDS")]
    records: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long, env = "METASAGE_POLICY")]
    policy: Option<PathBuf>,
    /// Directory with sml.ckpt (SAGE only).
    #[arg(long, env = "METASAGE_SML")]
    sml: Option<PathBuf>,
    /// Ignore any configured scale learner.
    #[arg(long)]
    no_sml: bool,
    /// sage, eas or as.
    #[arg(long)]
    mode: Option<AdaptMode>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    multistart: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Imitate the best solution so far instead of the iteration best.
    #[arg(long)]
    global_best: bool,
    /// Fill the seconds column.
    #[arg(long)]
    time: bool,
    #[command(flatten)]
    inputs: InstanceArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, env = "METASAGE_POLICY")]
    policy: Option<PathBuf>,
    #[arg(long, env = "METASAGE_SML")]
    sml: Option<PathBuf>,
    /// nn, two-opt or exact.
    #[arg(long)]
    baseline: Option<String>,
    /// Greedy starts (0 = one per node).
    #[arg(long)]
    multistart: Option<usize>,
    #[arg(long)]
    augment: Option<usize>,
    #[arg(long)]
    time: bool,
    #[command(flatten)]
    inputs: InstanceArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Result files (repeatable).
    #[arg(long)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    baseline_method: Option<String>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn apply_instances(cfg: &mut RunConfig, a: InstanceArgs) {
    set_opt(&mut cfg.inputs.instances, a.instances);
    set(&mut cfg.gen.n, a.n);
    set(&mut cfg.gen.count, a.count);
}

fn build_config(cli: Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.out, cli.out);
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.task, cli.task);
    set(&mut cfg.workers, cli.workers);
    let name = match cli.command {
        Command::Gen(a) => {
            set(&mut cfg.task, a.task);
            set(&mut cfg.gen.n, a.n);
            set(&mut cfg.gen.count, a.count);
            set(&mut cfg.gen.format, a.format);
            "gen"
        }
        Command::Pretrain(a) => {
            let t = &mut cfg.train;
            set(&mut t.n_train, a.n_train);
            set(&mut t.batch_instances, a.batch);
            set(&mut t.multistart, a.multistart);
            set(&mut t.epochs, a.epochs);
            set(&mut t.steps_per_epoch, a.steps);
            set(&mut t.learning_rate, a.lr);
            "pretrain"
        }
        Command::Distill(a) => {
            set_opt(&mut cfg.inputs.policy, a.policy);
            set(&mut cfg.distill.scales, a.scales);
            set(&mut cfg.distill.per_scale, a.per_scale);
            set(&mut cfg.distill.iterations, a.iters);
            "distill"
        }
        Command::TrainSml(a) => {
            set_opt(&mut cfg.inputs.policy, a.policy);
            set_opt(&mut cfg.inputs.records, a.records);
            set(&mut cfg.sml.epochs, a.epochs);
            set(&mut cfg.sml.beta, a.beta);
            set(&mut cfg.sml.learning_rate, a.lr);
            "train-sml"
        }
        Command::Adapt(a) => {
            set_opt(&mut cfg.inputs.policy, a.policy);
            set_opt(&mut cfg.inputs.sml, a.sml);
            if a.no_sml {
                cfg.inputs.sml = None;
            }
            if let Some(mode) = a.mode {
                if mode != cfg.adapt.mode {
                    // The learning-rate default depends on the mode.
                    cfg.adapt.delta = None;
                }
                cfg.adapt.mode = mode;
            }
            set_opt(&mut cfg.adapt.iterations, a.iters);
            set(&mut cfg.adapt.multistart, a.multistart);
            set_opt(&mut cfg.adapt.delta, a.delta);
            set(&mut cfg.adapt.lambda, a.lambda);
            cfg.adapt.imitate_global_best |= a.global_best;
            cfg.eval.record_time |= a.time;
            apply_instances(&mut cfg, a.inputs);
            "adapt"
        }
        Command::Eval(a) => {
            set_opt(&mut cfg.inputs.policy, a.policy);
            set_opt(&mut cfg.inputs.sml, a.sml);
            set(&mut cfg.eval.baseline, a.baseline);
            set(&mut cfg.eval.multistart, a.multistart);
            set(&mut cfg.eval.augmentations, a.augment);
            cfg.eval.record_time |= a.time;
            apply_instances(&mut cfg, a.inputs);
            "eval"
        }
        Command::Report(a) => {
            if !a.runs.is_empty() {
                cfg.inputs.runs = a.runs;
            }
            set_opt(&mut cfg.inputs.baseline, a.baseline);
            set_opt(&mut cfg.inputs.baseline_method, a.baseline_method);
            "report"
        }
        Command::Run => {
            anyhow::ensure!(cli.config.is_some(), "`run` needs --config pointing at a snapshot");
            return Ok(cfg);
        }
    };
    cfg.command = name.to_string();
    cfg.resolve();
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match build_config(cli).and_then(|cfg| execute(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
