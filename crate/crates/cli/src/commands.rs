use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use metasage_core::adapt::{adapt, zero_shot, AdaptMode};
use metasage_core::autodiff::checkpoint;
use metasage_core::domain::{generate, Instance, Task};
use metasage_core::eval::{
    exact_small, gap_table, mean, nearest_neighbor, parse_runs_csv, runs_csv, two_opt, GapReport, RunRow,
};
use metasage_core::io::{read_instance, to_native_json, Format, LibDocument};
use metasage_core::policy::{ModelConfig, PolicyParams};
use metasage_core::rng::{derive_path, derive_seed};
use metasage_core::sml::{build_distill_set, load_distill_set, save_distill_set, sml_log_csv, train_sml, SmlParams};
use metasage_core::train::{pretrain_with, train_log_csv};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SNAPSHOT_FILE};

pub const POLICY_FILE: &str = "policy.ckpt";
pub const MODEL_FILE: &str = "model.json";
pub const SML_FILE: &str = "sml.ckpt";
pub const RESULTS_FILE: &str = "results.csv";
pub const GAP_FILE: &str = "gap.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const LOG_FILE: &str = "log.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Output directory of one run: config snapshot, log and result files.
struct Run {
    dir: PathBuf,
    log: File,
}

impl Run {
    fn start(cfg: &RunConfig) -> Result<Run> {
        let dir = cfg.out.clone();
        fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        fs::write(dir.join(SNAPSHOT_FILE), cfg.to_toml()?)?;
        let log = File::create(dir.join(LOG_FILE))?;
        let mut run = Run { dir, log };
        run.note(format!("{} task={} seed={}", cfg.command, cfg.task, cfg.seed));
        Ok(run)
    }

    fn note(&mut self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        eprintln!("{msg}");
        let _ = writeln!(self.log, "{msg}");
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Execute `cfg.command` on a worker pool of `cfg.workers` threads.
pub fn execute(cfg: &RunConfig) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if cfg.workers > 0 {
        pool = pool.num_threads(cfg.workers);
    }
    let pool = pool.build()?;
    pool.install(|| match cfg.command.as_str() {
        "gen" => cmd_gen(cfg),
        "pretrain" => cmd_pretrain(cfg),
        "distill" => cmd_distill(cfg),
        "train-sml" => cmd_train_sml(cfg),
        "adapt" => cmd_adapt(cfg),
        "eval" => cmd_eval(cfg),
        "report" => cmd_report(cfg),
        "" => bail!("config has no command"),
        other => bail!("unknown command {other:?}"),
    })
}

/// Seed of the `i`-th generated instance of a run.
pub fn instance_seed(run_seed: u64, i: usize) -> u64 {
    derive_path(run_seed, &[0, i as u64])
}

pub fn instance_id(i: usize) -> String {
    format!("inst_{i:05}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub task: Task,
    pub n: usize,
    pub count: usize,
    pub seed: u64,
    pub format: String,
    pub instances: Vec<GenEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenEntry {
    pub id: String,
    pub file: String,
    pub seed: u64,
}

fn generated(cfg: &RunConfig) -> Result<Vec<(String, Instance)>> {
    (0..cfg.gen.count)
        .map(|i| Ok((instance_id(i), generate(cfg.task, cfg.gen.n, instance_seed(cfg.seed, i))?)))
        .collect()
}

fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let format: Format = cfg.gen.format.parse()?;
    let mut run = Run::start(cfg)?;
    let mut entries = Vec::with_capacity(cfg.gen.count);
    for (id, inst) in generated(cfg)? {
        let (file, text) = match format {
            Format::Native => (format!("{id}.json"), to_native_json(&inst)),
            Format::Lib => {
                let ext = if cfg.task == Task::Cvrp { "vrp" } else { "tsp" };
                (format!("{id}.{ext}"), LibDocument::from_instance(&inst, &id)?.to_text())
            }
        };
        run.write(&file, text)?;
        entries.push(GenEntry { id, file, seed: inst.seed });
    }
    let manifest = GenManifest {
        task: cfg.task,
        n: cfg.gen.n,
        count: cfg.gen.count,
        seed: cfg.seed,
        format: cfg.gen.format.clone(),
        instances: entries,
    };
    run.write(MANIFEST_FILE, serde_json::to_string_pretty(&manifest)? + "\n")?;
    run.note(format!("wrote {} {} instances (N={}) to {}", cfg.gen.count, cfg.task, cfg.gen.n, run.dir.display()));
    Ok(())
}

/// Instance files of a directory (sorted by name), or the `gen` instances
/// of this run when no directory is configured.
pub fn load_instances(cfg: &RunConfig) -> Result<Vec<(String, Instance)>> {
    let Some(dir) = &cfg.inputs.instances else {
        return generated(cfg);
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading instance directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            matches!(ext, "json" | "vrp" | "tsp") && name != MANIFEST_FILE
        })
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "no instance files in {}", dir.display());
    paths
        .iter()
        .map(|p| {
            let inst = read_instance(p, None).with_context(|| format!("reading {}", p.display()))?;
            ensure!(inst.task == cfg.task, "{} holds a {} instance, run task is {}", p.display(), inst.task, cfg.task);
            let id = p.file_stem().unwrap().to_string_lossy().into_owned();
            Ok((id, inst))
        })
        .collect()
}

pub fn save_policy(dir: &Path, params: &PolicyParams) -> Result<()> {
    checkpoint::save(dir.join(POLICY_FILE), params.params())?;
    fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(params.config())? + "\n")?;
    Ok(())
}

pub fn load_policy(cfg: &RunConfig) -> Result<PolicyParams> {
    let dir = cfg
        .inputs
        .policy
        .as_ref()
        .ok_or_else(|| anyhow!("no policy directory given (--policy or inputs.policy)"))?;
    let ckpt = dir.join(POLICY_FILE);
    ensure!(ckpt.is_file(), "policy checkpoint not found at {}; run `metasage pretrain` first", ckpt.display());
    let model_path = dir.join(MODEL_FILE);
    let model: ModelConfig = serde_json::from_str(
        &fs::read_to_string(&model_path).with_context(|| format!("reading {}", model_path.display()))?,
    )?;
    ensure!(model.task == cfg.task, "policy in {} was trained for {}, run task is {}", dir.display(), model.task, cfg.task);
    let set = checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    Ok(PolicyParams::from_param_set(model, set)?)
}

pub fn load_sml(dir: &Path) -> Result<SmlParams> {
    let ckpt = dir.join(SML_FILE);
    ensure!(ckpt.is_file(), "scale learner checkpoint not found at {}; run `metasage train-sml` first", ckpt.display());
    let set = checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    Ok(SmlParams::from_param_set(set)?)
}

fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    let tc = cfg.train_config();
    tc.validate()?;
    let mut run = Run::start(cfg)?;
    let per_epoch = tc.steps_per_epoch;
    let mut epoch_costs = Vec::with_capacity(per_epoch);
    let t0 = Instant::now();
    let outcome = pretrain_with(&tc, |row| {
        epoch_costs.push(row.mean_cost);
        if epoch_costs.len() == per_epoch {
            run.note(format!(
                "epoch {} mean cost {:.4} ({:.0}s)",
                row.epoch,
                mean(&epoch_costs),
                t0.elapsed().as_secs_f64()
            ));
            epoch_costs.clear();
        }
    })?;
    save_policy(&run.dir, &outcome.params)?;
    run.write("train_log.csv", train_log_csv(&outcome.log))?;
    run.note(format!("saved {}", run.dir.join(POLICY_FILE).display()));
    Ok(())
}

fn cmd_distill(cfg: &RunConfig) -> Result<()> {
    let policy = load_policy(cfg)?;
    let sage = cfg.distill_sage_config();
    sage.validate()?;
    ensure!(!cfg.distill.scales.is_empty() && cfg.distill.per_scale > 0, "distill needs scales and per_scale > 0");
    let mut run = Run::start(cfg)?;
    run.note(format!(
        "distilling {} instances per scale at {:?}, K={}",
        cfg.distill.per_scale, cfg.distill.scales, sage.iterations
    ));
    let t0 = Instant::now();
    let records = build_distill_set(&policy, &cfg.distill.scales, cfg.distill.per_scale, &sage, cfg.seed)?;
    save_distill_set(&run.dir, &records, sage.iterations)?;
    run.note(format!("saved {} records ({:.0}s)", records.len(), t0.elapsed().as_secs_f64()));
    Ok(())
}

fn cmd_train_sml(cfg: &RunConfig) -> Result<()> {
    let policy = load_policy(cfg)?;
    let dir = cfg
        .inputs
        .records
        .as_ref()
        .ok_or_else(|| anyhow!("no distillation records given (--records or inputs.records)"))?;
    let (manifest, records) =
        load_distill_set(dir).with_context(|| format!("loading distillation records from {}", dir.display()))?;
    ensure!(manifest.task == cfg.task, "records in {} are for {}, run task is {}", dir.display(), manifest.task, cfg.task);
    let mut run = Run::start(cfg)?;
    run.note(format!("training scale learner on {} records", records.len()));
    let (phi, log) = train_sml(&policy, &records, &cfg.sml_config())?;
    for r in &log {
        run.note(format!("epoch {} distil {:.5} zero {:.5}", r.epoch, r.distil, r.zero));
    }
    checkpoint::save(run.dir.join(SML_FILE), phi.params())?;
    run.write("sml_log.csv", sml_log_csv(&log))?;
    Ok(())
}

/// Optional scale learner for a SAGE run.
fn sml_for(cfg: &RunConfig, run: &mut Run) -> Result<Option<SmlParams>> {
    match (&cfg.inputs.sml, cfg.command.as_str(), cfg.adapt.mode) {
        (None, ..) => Ok(None),
        (Some(dir), "adapt", AdaptMode::Sage) | (Some(dir), "eval", _) => load_sml(dir).map(Some),
        (Some(_), _, mode) => {
            run.note(format!("scale learner ignored in {mode} mode"));
            Ok(None)
        }
    }
}

fn timed<T>(record: bool, f: impl FnOnce() -> T) -> (T, Option<f64>) {
    let t = Instant::now();
    let out = f();
    (out, record.then(|| t.elapsed().as_secs_f64()))
}

fn cmd_adapt(cfg: &RunConfig) -> Result<()> {
    let policy = load_policy(cfg)?;
    let sage = cfg.sage_config();
    sage.validate()?;
    let instances = load_instances(cfg)?;
    let mut run = Run::start(cfg)?;
    let sml = sml_for(cfg, &mut run)?;
    let method = match (sage.mode, sml.is_some()) {
        (AdaptMode::Sage, true) => "sage+sml".to_string(),
        (mode, _) => mode.to_string(),
    };
    run.note(format!("adapting {} instances with {method}, K={}", instances.len(), sage.iterations));
    let adapt_seed = derive_path(cfg.seed, &[1]);
    let outcomes: Vec<_> = instances
        .par_iter()
        .enumerate()
        .map(|(i, (id, inst))| {
            let (out, secs) = timed(cfg.eval.record_time, || {
                adapt(inst, &sage, &policy, sml.as_ref(), derive_seed(adapt_seed, i as u64))
            });
            out.map(|o| (o, secs)).map_err(|e| anyhow!(e.for_instance(id.clone())))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(instances.len());
    let mut curves = String::from("instance,k,best_cost,mean_cost,alpha,temperature\n");
    for ((id, _), (o, secs)) in instances.iter().zip(&outcomes) {
        rows.push(RunRow {
            instance: id.clone(),
            method: method.clone(),
            obj: o.best.objective,
            seconds: *secs,
        });
        for h in o.history() {
            curves.push_str(&format!(
                "{id},{},{},{},{},{}\n",
                h.k, h.best_cost, h.mean_cost, h.alpha, h.temperature
            ));
        }
    }
    run.write(RESULTS_FILE, runs_csv(&rows))?;
    run.write(CURVES_FILE, curves)?;
    let first: Vec<f64> = outcomes.iter().map(|(o, _)| o.history()[0].best_cost).collect();
    let last: Vec<f64> = rows.iter().map(|r| r.obj).collect();
    run.note(format!("mean objective: zero-shot {:.5}, adapted {:.5}", mean(&first), mean(&last)));
    Ok(())
}

fn baseline_solution(name: &str, inst: &Instance) -> Result<f64> {
    let sol = match name {
        "nn" => nearest_neighbor(inst)?,
        "two-opt" => {
            let nn = nearest_neighbor(inst)?;
            if inst.task == Task::Tsp {
                two_opt(inst, &nn, 1000)?
            } else {
                nn
            }
        }
        "exact" => exact_small(inst)?,
        other => bail!("unknown baseline {other:?} (expected nn, two-opt or exact)"),
    };
    Ok(sol.objective)
}

fn write_gap(run: &mut Run, report: &GapReport) -> Result<()> {
    run.write(GAP_FILE, report.to_csv())?;
    run.write(SUMMARY_FILE, report.summary_csv())?;
    let direction = if report.maximize {
        "maximization task: gap sign flipped, negative means better than baseline"
    } else {
        "negative gap means better than baseline"
    };
    run.note(format!("gaps are relative to a heuristic baseline; {direction}"));
    for s in &report.summary {
        run.note(format!(
            "{}: mean obj {:.5} vs {:.5}, gap {:.3}% over {} instances",
            s.method, s.mean_obj, s.mean_obj_b, s.mean_gap_pct, s.instances
        ));
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let policy = load_policy(cfg)?;
    let instances = load_instances(cfg)?;
    let mut run = Run::start(cfg)?;
    let sml = sml_for(cfg, &mut run)?;
    let method = if sml.is_some() { "model+sml" } else { "model" };
    let base_name = cfg.eval.baseline.as_str();
    let record = cfg.eval.record_time;
    let results: Vec<(RunRow, RunRow)> = instances
        .par_iter()
        .map(|(id, inst)| {
            let ms = if cfg.eval.multistart == 0 { inst.n() } else { cfg.eval.multistart };
            let (sol, secs) = timed(record, || {
                zero_shot(&policy, sml.as_ref(), inst, ms, cfg.eval.augmentations, inst.seed)
            });
            let sol = sol.map_err(|e| anyhow!(e.for_instance(id.clone())))?.0;
            let (base, base_secs) = timed(record, || baseline_solution(base_name, inst));
            let base = base.with_context(|| format!("baseline on {id}"))?;
            let row = |method: &str, obj, seconds| RunRow {
                instance: id.clone(),
                method: method.to_string(),
                obj,
                seconds,
            };
            Ok((row(method, sol.objective, secs), row(base_name, base, base_secs)))
        })
        .collect::<Result<_>>()?;
    let (model, base): (Vec<RunRow>, Vec<RunRow>) = results.into_iter().unzip();
    let all: Vec<RunRow> = model.iter().chain(&base).cloned().collect();
    run.write(RESULTS_FILE, runs_csv(&all))?;
    let column: Vec<(String, f64)> = base.iter().map(|r| (r.instance.clone(), r.obj)).collect();
    let report = gap_table(&model, &column, cfg.task.maximize())?;
    write_gap(&mut run, &report)
}

fn read_runs(path: &Path) -> Result<Vec<RunRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_runs_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    ensure!(!cfg.inputs.runs.is_empty(), "report needs at least one run file (--runs)");
    let base_path = cfg
        .inputs
        .baseline
        .as_ref()
        .ok_or_else(|| anyhow!("report needs a baseline run file (--baseline)"))?;
    let mut runs = Vec::new();
    for p in &cfg.inputs.runs {
        runs.extend(read_runs(p)?);
    }
    let mut base = read_runs(base_path)?;
    if let Some(m) = &cfg.inputs.baseline_method {
        base.retain(|r| &r.method == m);
        runs.retain(|r| &r.method != m);
    }
    let mut methods: Vec<&str> = base.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    ensure!(
        methods.len() == 1,
        "baseline file {} holds methods {methods:?}; pick one with --baseline-method",
        base_path.display()
    );
    let column: Vec<(String, f64)> = base.iter().map(|r| (r.instance.clone(), r.obj)).collect();
    let report = gap_table(&runs, &column, cfg.task.maximize())?;
    let mut run = Run::start(cfg)?;
    write_gap(&mut run, &report)
}
