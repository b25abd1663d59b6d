use rayon::prelude::*;

use super::{schedule_step, AdaptMode, AdaptState, HistoryRow, SageConfig};
use crate::autodiff::{grads_finite, Adam, AdamConfig, Bound, Tape, Tensor};
use crate::domain::{objective, Instance, Solution};
use crate::error::{Error, Result};
use crate::policy::{
    augment, choose_starts, encode, encode_on_tape, policy_gradient_weights, sample_view, sample_with_cache,
    weighted_trajectory_log_likelihood, DecodeMode, DecoderCache, EtaAdapter, PolicyParams, Trajectory,
};
use crate::rng::{derive_seed, rng_at};
use crate::sml::SmlParams;

/// Result of adapting to one instance.
#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    /// Final adapter (SAGE and EAS).
    pub adapter: Option<EtaAdapter>,
    /// Per-instance copy of the fine-tuned policy (Active Search).
    pub policy: Option<PolicyParams>,
    pub best: Solution,
    pub state: AdaptState,
}

impl AdaptOutcome {
    pub fn history(&self) -> &[HistoryRow] {
        &self.state.history
    }
}

const ADAPTER_INIT_TAG: u64 = u64::MAX;

fn views(instance: &Instance, count: usize) -> Result<Vec<Instance>> {
    (0..count).map(|a| augment(instance, a)).collect()
}

/// Frozen-policy embeddings per view, optionally passed through the scale
/// learner.
fn view_embeddings(policy: &PolicyParams, sml: Option<&SmlParams>, views: &[Instance]) -> Result<Vec<Tensor>> {
    views
        .iter()
        .map(|v| {
            let h = encode(policy, v)?.h;
            match sml {
                Some(phi) => phi.apply_tensor(&h, v.n()),
                None => Ok(h),
            }
        })
        .collect()
}

fn decode_views(
    policy: &PolicyParams,
    adapter: Option<&EtaAdapter>,
    instance: &Instance,
    views: &[Instance],
    hs: &[Tensor],
    starts: &[Option<usize>],
    mode: DecodeMode,
    alpha: f64,
    temperature: f64,
    rng: &mut crate::rng::SeedRng,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (a, (view, h)) in views.iter().zip(hs).enumerate() {
        for mut t in sample_view(policy, adapter, view, h, starts, mode, alpha, temperature, rng)? {
            t.view = a;
            if a != 0 {
                t.solution.objective = objective(instance, &t.solution.actions)?;
            }
            out.push(t);
        }
    }
    Ok(out)
}

fn mean_cost(trajs: &[Trajectory]) -> f64 {
    trajs.iter().map(|t| t.solution.objective).sum::<f64>() / trajs.len() as f64
}

fn best_index(trajs: &[Trajectory], instance: &Instance) -> usize {
    let mut best = 0;
    for (i, t) in trajs.iter().enumerate() {
        if t.solution.better_than(&trajs[best].solution, instance.task) {
            best = i;
        }
    }
    best
}

/// Greedy multistart decoding of the unadapted policy (with the scale
/// learner when given). Returns the best solution and all trajectories.
pub fn zero_shot(
    policy: &PolicyParams,
    sml: Option<&SmlParams>,
    instance: &Instance,
    multistart: usize,
    augmentations: usize,
    seed: u64,
) -> Result<(Solution, Vec<Trajectory>)> {
    let vs = views(instance, augmentations)?;
    let hs = view_embeddings(policy, sml, &vs)?;
    let mut rng = rng_at(seed, &[0]);
    let starts = choose_starts(instance, multistart.max(1), &mut rng)?;
    let trajs = decode_views(policy, None, instance, &vs, &hs, &starts, DecodeMode::Greedy, 0.0, 1.0, &mut rng)?;
    let best = trajs[best_index(&trajs, instance)].solution.clone();
    Ok((best, trajs))
}

/// SAGE adaptation of a fresh adapter on one instance. `θ*` and `φ` are
/// read-only.
pub fn sage(
    instance: &Instance,
    cfg: &SageConfig,
    policy: &PolicyParams,
    sml: Option<&SmlParams>,
    seed: u64,
) -> Result<AdaptOutcome> {
    adapt(instance, &SageConfig { mode: AdaptMode::Sage, ..cfg.clone() }, policy, sml, seed)
}

/// Efficient Active Search: SAGE without locality bias, schedules or
/// scale learner.
pub fn eas(instance: &Instance, cfg: &SageConfig, policy: &PolicyParams, seed: u64) -> Result<AdaptOutcome> {
    adapt(instance, &SageConfig { mode: AdaptMode::Eas, ..cfg.clone() }, policy, None, seed)
}

/// Active Search: fine-tune a per-instance copy of every policy tensor.
pub fn active_search(instance: &Instance, cfg: &SageConfig, policy: &PolicyParams, seed: u64) -> Result<AdaptOutcome> {
    adapt(instance, &SageConfig { mode: AdaptMode::As, ..cfg.clone() }, policy, None, seed)
}

/// Run the adaptation selected by `cfg.mode`. Randomness for iteration `k`
/// comes from `rng_at(seed, [k])`.
pub fn adapt(
    instance: &Instance,
    cfg: &SageConfig,
    policy: &PolicyParams,
    sml: Option<&SmlParams>,
    seed: u64,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    instance.validate()?;
    let sml = if cfg.mode == AdaptMode::Sage { sml } else { None };
    let vs = views(instance, cfg.augmentations)?;
    let frozen_h = view_embeddings(policy, sml, &vs)?;
    let mut state = AdaptState::new(cfg);

    let (greedy_best, greedy) = zero_shot(policy, sml, instance, cfg.multistart, cfg.augmentations, seed)?;
    state.history.push(HistoryRow {
        k: 0,
        best_cost: greedy_best.objective,
        mean_cost: mean_cost(&greedy),
        alpha: state.alpha,
        temperature: state.temperature,
    });
    state.best = Some(greedy_best.clone());
    let mut best_traj: Option<Trajectory> = None;

    let d = policy.config().embed_dim;
    let mut adapter = (cfg.mode != AdaptMode::As)
        .then(|| EtaAdapter::new(d, cfg.adapter_hidden, &mut rng_at(seed, &[ADAPTER_INIT_TAG])));
    let mut local = (cfg.mode == AdaptMode::As).then(|| policy.clone());
    if cfg.iterations == 0 || cfg.samples() == 0 {
        return Ok(AdaptOutcome {
            adapter,
            policy: local,
            best: greedy_best,
            state,
        });
    }
    let mut adam = match (&adapter, &local) {
        (Some(a), _) => Adam::new(AdamConfig::with_lr(cfg.delta), a.params()),
        (None, Some(p)) => Adam::new(AdamConfig::with_lr(cfg.delta), p.params()),
        _ => unreachable!(),
    };

    for k in 1..=cfg.iterations {
        let mut rng = rng_at(seed, &[k as u64]);
        let starts = choose_starts(instance, cfg.multistart, &mut rng)?;
        let mut tape = Tape::new();
        let (pol, bound_policy, bound_adapter) = match (&adapter, &local) {
            (Some(a), _) => (
                policy,
                policy.params().bind_ids(&mut tape, &policy.decoder_ids(), false),
                Some(a.params().bind(&mut tape, true)),
            ),
            (None, Some(p)) => (p, p.params().bind(&mut tape, true), None),
            _ => unreachable!(),
        };
        let adapter_ref = adapter.as_ref().zip(bound_adapter.as_ref());
        let mut trajs = Vec::with_capacity(cfg.samples());
        let mut traces = Vec::with_capacity(vs.len());
        let mut caches = Vec::with_capacity(vs.len());
        for (a, (view, h0)) in vs.iter().zip(&frozen_h).enumerate() {
            let hv = if local.is_some() {
                encode_on_tape(&mut tape, pol, &bound_policy, view)?
            } else {
                tape.constant(h0.clone())
            };
            let cache = DecoderCache::prepare(&mut tape, pol, &bound_policy, hv)?;
            let (view_trajs, trace) = sample_with_cache(
                &mut tape,
                &cache,
                adapter_ref,
                view,
                &starts,
                DecodeMode::Sample,
                state.alpha,
                state.temperature,
                &mut rng,
                true,
            )?;
            for mut t in view_trajs {
                t.view = a;
                if a != 0 {
                    t.solution.objective = objective(instance, &t.solution.actions)?;
                }
                trajs.push(t);
            }
            traces.push(trace);
            caches.push(cache);
        }
        let rewards: Vec<f64> = trajs.iter().map(|t| t.solution.reward(instance.task)).collect();
        let current_best = best_index(&trajs, instance);
        let iteration_mean = mean_cost(&trajs);
        if best_traj
            .as_ref()
            .map_or(true, |b| trajs[current_best].solution.better_than(&b.solution, instance.task))
        {
            best_traj = Some(trajs[current_best].clone());
        }
        let imitate = (!cfg.imitate_global_best).then_some(current_best);
        let weights = policy_gradient_weights(&rewards, cfg.lambda, imitate);

        let mut objective_var = None;
        for (a, trace) in traces.iter().enumerate() {
            let w = &weights[a * cfg.multistart..(a + 1) * cfg.multistart];
            if let Some(j) = trace.weighted_log_likelihood(&mut tape, w)? {
                objective_var = Some(match objective_var {
                    Some(acc) => tape.add(acc, j)?,
                    None => j,
                });
            }
        }
        if cfg.imitate_global_best {
            let best = std::slice::from_ref(best_traj.as_ref().unwrap());
            let extra = weighted_trajectory_log_likelihood(
                &mut tape,
                &caches,
                adapter_ref,
                best,
                &[cfg.lambda],
                state.alpha,
                state.temperature,
            )?;
            if let Some(j) = extra {
                objective_var = Some(match objective_var {
                    Some(acc) => tape.add(acc, j)?,
                    None => j,
                });
            }
        }
        if let Some(j) = objective_var {
            let loss = tape.scale(j, -1.0);
            let g = tape.backward(loss)?;
            let (set, bound): (_, &Bound) = match (&mut adapter, &mut local) {
                (Some(a), _) => (a.params_mut(), bound_adapter.as_ref().unwrap()),
                (None, Some(p)) => (p.params_mut(), &bound_policy),
                _ => unreachable!(),
            };
            let grads = bound.grads(&g, set);
            if !grads_finite(&grads) || !tape.value(loss).is_finite() {
                return Err(Error::AdaptationDiverged {
                    iteration: k,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(set, &grads)?;
        }

        let incumbent = state.best.as_mut().unwrap();
        let cand = &best_traj.as_ref().unwrap().solution;
        if cand.better_than(incumbent, instance.task) {
            *incumbent = cand.clone();
        }
        state.history.push(HistoryRow {
            k,
            best_cost: incumbent.objective,
            mean_cost: iteration_mean,
            alpha: state.alpha,
            temperature: state.temperature,
        });
        state = match cfg.mode {
            AdaptMode::Sage => schedule_step(&state, cfg)?,
            _ => AdaptState { k, ..state },
        };
    }
    let best = state.best.clone().unwrap();
    Ok(AdaptOutcome {
        adapter,
        policy: local,
        best,
        state,
    })
}

/// Adapt every instance independently (in parallel). Instance `i` uses seed
/// `derive_seed(seed, i)`; errors carry the instance index.
pub fn adapt_many(
    instances: &[Instance],
    cfg: &SageConfig,
    policy: &PolicyParams,
    sml: Option<&SmlParams>,
    seed: u64,
) -> Result<Vec<AdaptOutcome>> {
    instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            adapt(inst, cfg, policy, sml, derive_seed(seed, i as u64)).map_err(|e| e.for_instance(i.to_string()))
        })
        .collect()
}
