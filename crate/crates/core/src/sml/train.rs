use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::distill::DistillRecord;
use super::params::SmlParams;
use crate::autodiff::{grads_finite, Adam, AdamConfig, Bound, Tape, Tensor, Var};
use crate::domain::Instance;
use crate::error::{Error, Result};
use crate::policy::{choose_starts, policy_gradient_weights, sample_with_cache, DecodeMode, DecoderCache, PolicyParams};
use crate::rng::{derive_path, rng_at, rng_from};

/// `(1/L) Σ_l ‖g_φ(h_l, N_l) − h^T_l‖_F` on the tape (to be minimized).
pub fn j_distil(tape: &mut Tape, phi: &SmlParams, bound: &Bound, records: &[&DistillRecord]) -> Result<Var> {
    if records.is_empty() {
        return Err(Error::Argument("j_distil needs at least one record".into()));
    }
    let mut total = None;
    for r in records {
        let h = tape.constant(r.source.clone());
        let hs = phi.apply_on_tape(tape, bound, h, r.scale)?;
        let t = tape.constant(r.target.clone());
        let diff = tape.sub(hs, t)?;
        let norm = tape.frobenius_norm(diff);
        total = Some(match total {
            Some(acc) => tape.add(acc, norm)?,
            None => norm,
        });
    }
    Ok(tape.scale(total.unwrap(), 1.0 / records.len() as f64))
}

/// Value of [`j_distil`] without keeping a tape.
pub fn distil_loss(phi: &SmlParams, records: &[DistillRecord]) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = phi.params().bind(&mut tape, false);
    let refs: Vec<&DistillRecord> = records.iter().collect();
    let v = j_distil(&mut tape, phi, &bound, &refs)?;
    tape.value(v).item()
}

/// Settings of the zero-shot objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotConfig {
    pub multistart: usize,
    pub lambda: f64,
}

/// Zero-shot SAGE objective: the frozen policy decodes from `h^S = g_φ(h,
/// N)` with no adapter, `α = 0`, `𝒯 = 1`. Gradients reach only `φ`.
/// `batch` pairs each instance with its frozen embeddings. Returns the
/// objective to maximize (mean over instances), or `None` if no decision
/// carried any weight.
#[allow(clippy::too_many_arguments)]
pub fn j_zero(
    tape: &mut Tape,
    phi: &SmlParams,
    bound: &Bound,
    policy: &PolicyParams,
    policy_bound: &Bound,
    batch: &[(Instance, Tensor)],
    cfg: &ZeroShotConfig,
    seed: u64,
) -> Result<Option<Var>> {
    if batch.is_empty() {
        return Err(Error::Argument("j_zero needs at least one instance".into()));
    }
    let mut total = None;
    for (i, (inst, h)) in batch.iter().enumerate() {
        let mut rng = rng_from(derive_path(seed, &[i as u64]));
        let hv = tape.constant(h.clone());
        let hs = phi.apply_on_tape(tape, bound, hv, inst.n())?;
        let cache = DecoderCache::prepare(tape, policy, policy_bound, hs)?;
        let starts = choose_starts(inst, cfg.multistart, &mut rng)?;
        let (trajs, trace) =
            sample_with_cache(tape, &cache, None, inst, &starts, DecodeMode::Sample, 0.0, 1.0, &mut rng, true)?;
        let rewards: Vec<f64> = trajs.iter().map(|t| t.solution.reward(inst.task)).collect();
        let mut best = 0;
        for (m, r) in rewards.iter().enumerate() {
            if *r > rewards[best] {
                best = m;
            }
        }
        let w = policy_gradient_weights(&rewards, cfg.lambda, Some(best));
        if let Some(j) = trace.weighted_log_likelihood(tape, &w)? {
            total = Some(match total {
                Some(acc) => tape.add(acc, j)?,
                None => j,
            });
        }
    }
    Ok(total.map(|t| tape.scale(t, 1.0 / batch.len() as f64)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmlTrainConfig {
    /// Weight of the zero-shot objective.
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub zero_shot: ZeroShotConfig,
    pub seed: u64,
}

impl Default for SmlTrainConfig {
    fn default() -> Self {
        SmlTrainConfig {
            beta: 1.0,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 16,
            hidden: 128,
            zero_shot: ZeroShotConfig {
                multistart: 20,
                lambda: 0.005,
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmlLogRow {
    pub epoch: usize,
    /// Mean `J_distil` over the epoch's mini-batches (before each update).
    pub distil: f64,
    pub zero: f64,
    pub loss: f64,
}

pub fn sml_log_csv(rows: &[SmlLogRow]) -> String {
    let mut out = String::from("epoch,distil,zero,loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.distil, r.zero, r.loss));
    }
    out
}

/// Minimize `J_distil − β·J_zero` over `φ` with Adam; `θ*` and the records
/// are read-only.
pub fn train_sml(
    policy: &PolicyParams,
    records: &[DistillRecord],
    cfg: &SmlTrainConfig,
) -> Result<(SmlParams, Vec<SmlLogRow>)> {
    if records.is_empty() {
        return Err(Error::Argument("SML training needs distillation records".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate >= 0.0) || !(cfg.beta >= 0.0) {
        return Err(Error::Config("batch_size, learning_rate and beta must be valid".into()));
    }
    let d = policy.config().embed_dim;
    let mut phi = SmlParams::new(d, cfg.hidden, &mut rng_at(cfg.seed, &[0]));
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate), phi.params());
    let instances: Vec<Instance> = records.iter().map(|r| r.instance()).collect::<Result<_>>()?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng_at(cfg.seed, &[1, epoch as u64]));
        let (mut sum_d, mut sum_z, mut sum_l, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bound = phi.params().bind(&mut tape, true);
            let recs: Vec<&DistillRecord> = chunk.iter().map(|&i| &records[i]).collect();
            let jd = j_distil(&mut tape, &phi, &bound, &recs)?;
            let mut loss = jd;
            let mut zero = 0.0;
            if cfg.beta > 0.0 {
                let pb = policy.params().bind_ids(&mut tape, &policy.decoder_ids(), false);
                let batch: Vec<(Instance, Tensor)> = chunk
                    .iter()
                    .map(|&i| (instances[i].clone(), records[i].source.clone()))
                    .collect();
                let seed = derive_path(cfg.seed, &[2, epoch as u64, b as u64]);
                if let Some(jz) = j_zero(&mut tape, &phi, &bound, policy, &pb, &batch, &cfg.zero_shot, seed)? {
                    zero = tape.value(jz).item()?;
                    let scaled = tape.scale(jz, cfg.beta);
                    loss = tape.sub(jd, scaled)?;
                }
            }
            let lv = tape.value(loss).item()?;
            let g = tape.backward(loss)?;
            let grads = bound.grads(&g, phi.params());
            if !lv.is_finite() || !grads_finite(&grads) {
                return Err(Error::TrainingDiverged {
                    step: epoch,
                    detail: format!("SML loss {lv} in batch {b}"),
                });
            }
            sum_d += tape.value(jd).item()?;
            sum_z += zero;
            sum_l += lv;
            batches += 1;
            adam.step(phi.params_mut(), &grads)?;
        }
        let k = batches as f64;
        log.push(SmlLogRow {
            epoch,
            distil: sum_d / k,
            zero: sum_z / k,
            loss: sum_l / k,
        });
    }
    Ok((phi, log))
}
