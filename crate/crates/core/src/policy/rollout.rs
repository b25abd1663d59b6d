use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adapter::EtaAdapter;
use super::augment::{augment, NUM_AUGMENTATIONS};
use super::decoder::{DecoderCache, StepRecord};
use super::encoder::encode;
use super::params::PolicyParams;
use crate::autodiff::{Bound, Tape, Tensor, Var};
use crate::domain::{objective, objective_of_terminal, Instance, RolloutState, Solution, Task};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub mode: DecodeMode,
    /// Rollouts per view, each forced to a distinct first node when possible.
    pub multistart: usize,
    /// Number of dihedral views (1..=8).
    pub augmentations: usize,
}

impl DecodeConfig {
    pub fn greedy(multistart: usize, augmentations: usize) -> Self {
        DecodeConfig {
            temperature: 1.0,
            alpha: 0.0,
            mode: DecodeMode::Greedy,
            multistart,
            augmentations,
        }
    }

    pub fn sample(multistart: usize, augmentations: usize) -> Self {
        DecodeConfig {
            mode: DecodeMode::Sample,
            ..Self::greedy(multistart, augmentations)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.multistart == 0 {
            return Err(Error::Config("multistart must be at least 1".into()));
        }
        if !(1..=NUM_AUGMENTATIONS).contains(&self.augmentations) {
            return Err(Error::Config(format!(
                "augmentations must be in 1..=8, got {}",
                self.augmentations
            )));
        }
        Ok(())
    }
}

/// One decoded solution with the decisions needed to recompute its
/// log-probability under other parameters.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub view: usize,
    pub start: Option<usize>,
    pub solution: Solution,
    /// `Σ_t log p(a_t|s_t)` over the non-forced decisions.
    pub log_prob: f64,
    /// Decisions with more than one feasible option (single-option steps
    /// have log-probability exactly zero and are not stored).
    pub records: Vec<StepRecord>,
}

/// First nodes for `count` multistart rollouts: every node (TSP) or every
/// customer reachable from the depot, cycled when `count` exceeds them, or a
/// random subset otherwise.
pub fn choose_starts(inst: &Instance, count: usize, rng: &mut impl Rng) -> Result<Vec<Option<usize>>> {
    let fresh = RolloutState::new(inst);
    let mask = fresh.feasible_mask()?;
    let first = if inst.task.has_depot() { 1 } else { 0 };
    let cands: Vec<usize> = (first..inst.n()).filter(|&j| mask[j]).collect();
    if cands.is_empty() {
        return Ok(vec![None; count]);
    }
    if count >= cands.len() {
        return Ok((0..count).map(|i| Some(cands[i % cands.len()])).collect());
    }
    let mut picked: Vec<usize> = sample(rng, cands.len(), count).into_iter().map(|i| cands[i]).collect();
    picked.sort_unstable();
    Ok(picked.into_iter().map(Some).collect())
}

fn pick_action(lp: &[f64], masked: &[bool], mode: DecodeMode, rng: &mut impl Rng) -> usize {
    let open = || (0..lp.len()).filter(|&j| !masked[j]);
    match mode {
        DecodeMode::Greedy => {
            let mut best = None;
            for j in open() {
                if best.map_or(true, |b: usize| lp[j] > lp[b]) {
                    best = Some(j);
                }
            }
            best.unwrap()
        }
        DecodeMode::Sample => {
            let total: f64 = open().map(|j| lp[j].exp()).sum();
            let mut u = rng.gen::<f64>() * total;
            let mut last = 0;
            for j in open() {
                let p = lp[j].exp();
                last = j;
                if u < p {
                    return j;
                }
                u -= p;
            }
            last
        }
    }
}

/// Log-probabilities of the decisions taken, kept on the caller's tape.
#[derive(Clone, Debug, Default)]
pub struct DecodeTrace {
    /// Per decoding step: the `rows × N` log-probabilities, the trajectory
    /// of each row and the action it took.
    steps: Vec<(Var, Vec<usize>, Vec<usize>)>,
}

impl DecodeTrace {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `Σ_m w_m · log p(trajectory_m)`; `None` when nothing was recorded.
    pub fn weighted_log_likelihood(&self, tape: &mut Tape, weights: &[f64]) -> Result<Option<Var>> {
        let mut total = None;
        for (lp, trajs, actions) in &self.steps {
            let picked = tape.pick_per_row(*lp, actions)?;
            let w: Vec<f64> = trajs.iter().map(|&m| weights[m]).collect();
            let s = tape.weighted_sum(picked, &w)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        Ok(total)
    }
}

/// Decode one rollout per entry of `starts` using a cache prepared on
/// `tape`. With `keep_trace` the step log-probabilities stay on the tape so
/// a gradient can be taken without re-running the decoder; otherwise the
/// tape is rolled back after every step.
#[allow(clippy::too_many_arguments)]
pub fn sample_with_cache(
    tape: &mut Tape,
    cache: &DecoderCache,
    adapter: Option<(&EtaAdapter, &Bound)>,
    view: &Instance,
    starts: &[Option<usize>],
    mode: DecodeMode,
    alpha: f64,
    temperature: f64,
    rng: &mut impl Rng,
    keep_trace: bool,
) -> Result<(Vec<Trajectory>, DecodeTrace)> {
    let base = tape.len();
    let mut trace = DecodeTrace::default();
    let mut states: Vec<RolloutState> = Vec::with_capacity(starts.len());
    for s in starts {
        let mut st = RolloutState::new(view);
        if let Some(a) = *s {
            st.step(a)?;
        }
        states.push(st);
    }
    let mut records: Vec<Vec<StepRecord>> = vec![Vec::new(); starts.len()];
    let mut log_prob = vec![0.0; starts.len()];
    loop {
        let mut pending: Vec<(usize, StepRecord)> = Vec::new();
        for (i, st) in states.iter_mut().enumerate() {
            if st.is_terminal() {
                continue;
            }
            let rec = StepRecord::observe(st)?;
            if rec.feasible_count() == 1 {
                let only = rec.masked.iter().position(|m| !m).unwrap();
                st.step(only)?;
            } else {
                pending.push((i, rec));
            }
        }
        if pending.is_empty() {
            if states.iter().all(|s| s.is_terminal()) {
                break;
            }
            continue;
        }
        let rows: Vec<&StepRecord> = pending.iter().map(|(_, r)| r).collect();
        let lp = cache.log_probs(tape, adapter, &rows, alpha, temperature)?;
        let lpv = tape.value(lp).clone();
        if !keep_trace {
            tape.truncate(base);
        }
        let mut owners = Vec::with_capacity(pending.len());
        let mut actions = Vec::with_capacity(pending.len());
        for (r, (i, mut rec)) in pending.into_iter().enumerate() {
            let row = lpv.row(r);
            let a = pick_action(row, &rec.masked, mode, rng);
            rec.action = a;
            log_prob[i] += row[a];
            states[i].step(a)?;
            records[i].push(rec);
            owners.push(i);
            actions.push(a);
        }
        if keep_trace {
            trace.steps.push((lp, owners, actions));
        }
    }
    let out = states
        .iter()
        .zip(records)
        .zip(log_prob)
        .zip(starts)
        .map(|(((st, records), log_prob), &start)| Trajectory {
            view: 0,
            start,
            solution: Solution {
                actions: st.partial().to_vec(),
                objective: objective_of_terminal(st),
                feasible: true,
            },
            log_prob,
            records,
        })
        .collect();
    Ok((out, trace))
}

/// Decode one rollout per entry of `starts` on a single view whose
/// (possibly transformed) embeddings are `h`, with every tensor frozen.
#[allow(clippy::too_many_arguments)]
pub fn sample_view(
    policy: &PolicyParams,
    adapter: Option<&EtaAdapter>,
    view: &Instance,
    h: &Tensor,
    starts: &[Option<usize>],
    mode: DecodeMode,
    alpha: f64,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    let mut tape = Tape::new();
    let pb = policy.params().bind_ids(&mut tape, &policy.decoder_ids(), false);
    let ab = adapter.map(|a| a.params().bind(&mut tape, false));
    let hv = tape.constant(h.clone());
    let cache = DecoderCache::prepare(&mut tape, policy, &pb, hv)?;
    let (trajs, _) = sample_with_cache(
        &mut tape,
        &cache,
        adapter.zip(ab.as_ref()),
        view,
        starts,
        mode,
        alpha,
        temperature,
        rng,
        false,
    )?;
    Ok(trajs)
}

/// Replay `actions` and collect the decision records a rollout would have
/// stored. With `forced_first`, the first action is not a decision.
pub fn records_for(inst: &Instance, actions: &[usize], forced_first: bool) -> Result<Vec<StepRecord>> {
    let mut st = RolloutState::new(inst);
    let mut out = Vec::new();
    for (t, &a) in actions.iter().enumerate() {
        if !(forced_first && t == 0) {
            let mut rec = StepRecord::observe(&st)?;
            if rec.feasible_count() > 1 {
                rec.action = a;
                out.push(rec);
            }
        }
        st.step(a)?;
    }
    Ok(out)
}

/// `multistart × augmentations` rollouts on `instance`. Objectives are
/// evaluated on the untransformed instance.
pub fn rollout(
    params: &PolicyParams,
    instance: &Instance,
    cfg: &DecodeConfig,
    adapter: Option<&EtaAdapter>,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let starts = choose_starts(instance, cfg.multistart, rng)?;
    let mut out = Vec::with_capacity(cfg.multistart * cfg.augmentations);
    for a in 0..cfg.augmentations {
        let view = augment(instance, a)?;
        let emb = encode(params, &view)?;
        let trajs = sample_view(
            params,
            adapter,
            &view,
            &emb.h,
            &starts,
            cfg.mode,
            cfg.alpha,
            cfg.temperature,
            rng,
        )?;
        for mut t in trajs {
            t.view = a;
            if a != 0 {
                t.solution.objective = objective(instance, &t.solution.actions)?;
            }
            out.push(t);
        }
    }
    Ok(out)
}

/// `Σ_m w_m · log p(trajectory_m)` on `tape`, with one decoder cache per
/// view. Returns `None` when no trajectory holds a real decision.
pub fn weighted_trajectory_log_likelihood(
    tape: &mut Tape,
    caches: &[DecoderCache],
    adapter: Option<(&EtaAdapter, &Bound)>,
    trajs: &[Trajectory],
    weights: &[f64],
    alpha: f64,
    temperature: f64,
) -> Result<Option<Var>> {
    if weights.len() != trajs.len() {
        return Err(Error::Argument(format!(
            "{} weights for {} trajectories",
            weights.len(),
            trajs.len()
        )));
    }
    let mut total = None;
    for (view, cache) in caches.iter().enumerate() {
        let mut rows = Vec::new();
        let mut w = Vec::new();
        for (t, &wt) in trajs.iter().zip(weights) {
            if t.view == view && wt != 0.0 {
                rows.extend(t.records.iter());
                w.extend(std::iter::repeat(wt).take(t.records.len()));
            }
        }
        if rows.is_empty() {
            continue;
        }
        let ll = cache.weighted_log_likelihood(tape, adapter, &rows, &w, alpha, temperature)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, ll)?,
            None => ll,
        });
    }
    Ok(total)
}

/// REINFORCE weights with the shared mean baseline, `(R_m − b)/M`, plus
/// `lambda` on the trajectory at `best`.
pub fn policy_gradient_weights(rewards: &[f64], lambda: f64, best: Option<usize>) -> Vec<f64> {
    let m = rewards.len() as f64;
    // exact when all rewards agree, so equal rewards give exactly zero weight
    let b = if rewards.iter().all(|&r| r == rewards[0]) {
        rewards[0]
    } else {
        rewards.iter().sum::<f64>() / m
    };
    let mut w: Vec<f64> = rewards.iter().map(|r| (r - b) / m).collect();
    if let Some(i) = best {
        w[i] += lambda;
    }
    w
}

/// Best trajectory for `task` (first among equals).
pub fn best_trajectory(trajs: &[Trajectory], task: Task) -> Option<&Trajectory> {
    let mut best: Option<&Trajectory> = None;
    for t in trajs {
        if best.map_or(true, |b| t.solution.better_than(&b.solution, task)) {
            best = Some(t);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{evaluate, generate};
    use crate::policy::ModelConfig;
    use crate::rng::rng_from;

    fn small(task: Task) -> PolicyParams {
        let cfg = ModelConfig {
            embed_dim: 16,
            heads: 4,
            layers: 1,
            ff_dim: 32,
            ..ModelConfig::new(task)
        };
        PolicyParams::new(cfg, &mut rng_from(5)).unwrap()
    }

    #[test]
    fn rollouts_are_feasible_for_every_task() {
        for task in Task::ALL {
            let p = small(task);
            let inst = generate(task, 12, 8).unwrap();
            let cfg = DecodeConfig::sample(6, 2);
            let trajs = rollout(&p, &inst, &cfg, None, &mut rng_from(1)).unwrap();
            assert_eq!(trajs.len(), 12);
            for t in &trajs {
                let sol = evaluate(&inst, &t.solution.actions).unwrap();
                assert!((sol.objective - t.solution.objective).abs() < 1e-9, "{task}");
                assert!(t.log_prob.is_finite() && t.log_prob <= 0.0);
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_and_starts_are_distinct() {
        let p = small(Task::Tsp);
        let inst = generate(Task::Tsp, 10, 2).unwrap();
        let cfg = DecodeConfig::greedy(10, 1);
        let a = rollout(&p, &inst, &cfg, None, &mut rng_from(1)).unwrap();
        let b = rollout(&p, &inst, &cfg, None, &mut rng_from(2)).unwrap();
        let starts: Vec<_> = a.iter().map(|t| t.solution.actions[0]).collect();
        assert_eq!(starts, (0..10).collect::<Vec<_>>());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.solution.actions, y.solution.actions);
        }
    }

    #[test]
    fn stored_log_prob_matches_replayed_records() {
        let p = small(Task::Pctsp);
        let inst = generate(Task::Pctsp, 10, 6).unwrap();
        let trajs = rollout(&p, &inst, &DecodeConfig::sample(4, 1), None, &mut rng_from(3)).unwrap();
        let emb = encode(&p, &inst).unwrap();
        for t in &trajs {
            let recs = records_for(&inst, &t.solution.actions, true).unwrap();
            assert_eq!(recs, t.records);
            let mut tape = Tape::new();
            let pb = p.params().bind(&mut tape, false);
            let h = tape.constant(emb.h.clone());
            let cache = DecoderCache::prepare(&mut tape, &p, &pb, h).unwrap();
            let rows: Vec<&StepRecord> = recs.iter().collect();
            let ll = cache
                .weighted_log_likelihood(&mut tape, None, &rows, &vec![1.0; rows.len()], 0.0, 1.0)
                .unwrap();
            assert!((tape.value(ll).item().unwrap() - t.log_prob).abs() < 1e-9);
        }
    }

    #[test]
    fn starts_subset_when_budget_is_small() {
        let inst = generate(Task::Cvrp, 20, 1).unwrap();
        let s = choose_starts(&inst, 5, &mut rng_from(0)).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|x| matches!(x, Some(j) if *j >= 1)));
        let mut d: Vec<_> = s.iter().flatten().collect();
        d.dedup();
        assert_eq!(d.len(), 5);
    }
}
