//! Pretraining of the base policy with multistart REINFORCE and a shared
//! per-instance mean baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grads_finite, sum_grads, Adam, AdamConfig, Tape, Tensor};
use crate::domain::{generate, Instance, Task};
use crate::error::{Error, Result};
use crate::eval::{gap_pct, mean};
use crate::policy::{
    choose_starts, encode_on_tape, policy_gradient_weights, sample_with_cache,
    DecodeConfig, DecodeMode, DecoderCache, ModelConfig, PolicyParams,
};
use crate::rng::{derive_path, rng_at, rng_from};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    /// Nodes per training instance.
    pub n_train: usize,
    pub batch_instances: usize,
    pub multistart: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn new(task: Task) -> Self {
        TrainConfig {
            task,
            n_train: 20,
            batch_instances: 32,
            multistart: 20,
            epochs: 10,
            steps_per_epoch: 50,
            learning_rate: 1e-3,
            seed: 0,
            model: ModelConfig::new(task),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_train", self.n_train),
            ("batch_instances", self.batch_instances),
            ("multistart", self.multistart),
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_train < 2 {
            return Err(Error::Config("n_train must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.model.task != self.task {
            return Err(Error::Config("model task differs from training task".into()));
        }
        self.model.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub epoch: usize,
    pub mean_cost: f64,
    pub loss: f64,
}

/// CSV with columns `step,epoch,mean_cost,loss`.
pub fn train_log_csv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from("step,epoch,mean_cost,loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.epoch, r.mean_cost, r.loss));
    }
    out
}

/// Per-instance contribution to one update: gradients of
/// `−(1/B) Σ_m (R_m − b) log p_m`, the surrogate loss, and the mean cost.
fn instance_gradient(
    params: &PolicyParams,
    inst: &Instance,
    multistart: usize,
    batch: usize,
    seed: u64,
) -> Result<(Vec<Tensor>, f64, f64)> {
    let mut rng = rng_from(seed);
    let mut tape = Tape::new();
    let bound = params.params().bind(&mut tape, true);
    let h = encode_on_tape(&mut tape, params, &bound, inst)?;
    let cache = DecoderCache::prepare(&mut tape, params, &bound, h)?;
    let starts = choose_starts(inst, multistart, &mut rng)?;
    let (trajs, trace) = sample_with_cache(
        &mut tape,
        &cache,
        None,
        inst,
        &starts,
        DecodeMode::Sample,
        0.0,
        1.0,
        &mut rng,
        true,
    )?;
    let rewards: Vec<f64> = trajs.iter().map(|t| t.solution.reward(inst.task)).collect();
    let cost = mean(&trajs.iter().map(|t| t.solution.objective).collect::<Vec<_>>());
    let weights = policy_gradient_weights(&rewards, 0.0, None);
    let Some(j) = trace.weighted_log_likelihood(&mut tape, &weights)? else {
        let zeros = params.params().tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        return Ok((zeros, 0.0, cost));
    };
    let loss = tape.scale(j, -1.0 / batch as f64);
    let g = tape.backward(loss)?;
    let loss_value = tape.value(loss).item()?;
    Ok((bound.grads(&g, params.params()), loss_value, cost))
}

/// One REINFORCE update on `instances`. Returns `(mean cost, loss)`; a
/// non-finite loss or gradient is reported as divergence at `step`.
pub fn train_step(
    params: &mut PolicyParams,
    adam: &mut Adam,
    instances: &[Instance],
    multistart: usize,
    seed: u64,
    step: usize,
) -> Result<(f64, f64)> {
    let batch = instances.len();
    let parts: Vec<(Vec<Tensor>, f64, f64)> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| instance_gradient(params, inst, multistart, batch, derive_path(seed, &[i as u64])))
        .collect::<Result<_>>()?;
    let mut grads: Vec<Tensor> = params.params().tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let (mut loss, mut cost) = (0.0, 0.0);
    for (g, l, c) in &parts {
        sum_grads(&mut grads, g);
        loss += l;
        cost += c;
    }
    if !loss.is_finite() || !grads_finite(&grads) {
        return Err(Error::TrainingDiverged {
            step,
            detail: format!("loss {loss}"),
        });
    }
    adam.step(params.params_mut(), &grads)?;
    Ok((cost / batch as f64, loss))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<TrainLogRow>,
}

/// Pretrain from scratch on freshly generated instances. `progress` sees
/// every log row as it is produced.
pub fn pretrain_with(cfg: &TrainConfig, mut progress: impl FnMut(&TrainLogRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = PolicyParams::new(cfg.model.clone(), &mut rng_at(cfg.seed, &[0]))?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate), params.params());
    let mut log = Vec::with_capacity(cfg.epochs * cfg.steps_per_epoch);
    for epoch in 0..cfg.epochs {
        for s in 0..cfg.steps_per_epoch {
            let step = epoch * cfg.steps_per_epoch + s;
            let step_seed = derive_path(cfg.seed, &[1, step as u64]);
            let instances: Vec<Instance> = (0..cfg.batch_instances)
                .map(|i| generate(cfg.task, cfg.n_train, derive_path(step_seed, &[0, i as u64])))
                .collect::<Result<_>>()?;
            let (mean_cost, loss) = train_step(&mut params, &mut adam, &instances, cfg.multistart, derive_path(step_seed, &[1]), step)?;
            let row = TrainLogRow {
                step,
                epoch,
                mean_cost,
                loss,
            };
            progress(&row);
            log.push(row);
        }
    }
    Ok(TrainOutcome { params, log })
}

pub fn pretrain(cfg: &TrainConfig) -> Result<TrainOutcome> {
    pretrain_with(cfg, |_| {})
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub objectives: Vec<f64>,
    pub mean_objective: f64,
    pub mean_baseline: f64,
    /// Mean of the per-instance gaps, in percent.
    pub mean_gap_pct: f64,
}

/// Greedy multistart evaluation against a baseline objective column.
pub fn validate(
    params: &PolicyParams,
    dataset: &[Instance],
    baseline: Option<&[f64]>,
    decode: &DecodeConfig,
) -> Result<ValidationReport> {
    if dataset.is_empty() {
        return Err(Error::Argument("validation dataset is empty".into()));
    }
    let baseline = baseline.ok_or_else(|| Error::Config("validation needs a baseline objective column".into()))?;
    if baseline.len() != dataset.len() {
        return Err(Error::Config(format!(
            "{} baseline values for {} instances",
            baseline.len(),
            dataset.len()
        )));
    }
    let objectives: Vec<f64> = dataset
        .par_iter()
        .map(|inst| {
            crate::adapt::zero_shot(params, None, inst, decode.multistart, decode.augmentations, inst.seed)
                .map(|(s, _)| s.objective)
        })
        .collect::<Result<_>>()?;
    let gaps: Vec<f64> = objectives.iter().zip(baseline).map(|(&o, &b)| gap_pct(o, b)).collect();
    Ok(ValidationReport {
        mean_objective: mean(&objectives),
        mean_baseline: mean(baseline),
        mean_gap_pct: mean(&gaps),
        objectives,
    })
}
