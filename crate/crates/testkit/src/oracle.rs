use metasage_core::autodiff::Tape;
use metasage_core::domain::{generate, Instance, RolloutState, Solution, Task};
use metasage_core::policy::{
    decode_step, encode, encode_on_tape, records_for, weighted_trajectory_log_likelihood, DecoderCache, PolicyParams,
    Trajectory,
};

use crate::tiny_policy;

/// Euclidean distance recomputed from coordinates.
pub fn dist(inst: &Instance, i: usize, j: usize) -> f64 {
    let (a, b) = (inst.coords[i], inst.coords[j]);
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Check a finished solution against the task constraints and return its
/// objective, computed from scratch.
pub fn check_solution(inst: &Instance, sol: &Solution) -> Result<f64, String> {
    let a = &sol.actions;
    let n = inst.n();
    ensure!(a.iter().all(|&x| x < n), "node index out of range in {a:?}");
    let mut seen = vec![false; n];
    match inst.task {
        Task::Tsp => {
            for &x in a {
                ensure!(!seen[x], "node {x} repeated in {a:?}");
                seen[x] = true;
            }
            ensure!(a.len() == n, "not a permutation: {a:?}");
            Ok((0..n).map(|i| dist(inst, a[i], a[(i + 1) % n])).sum())
        }
        Task::Cvrp => {
            let dem = inst.demands.as_ref().ok_or("CVRP without demands")?;
            let (mut load, mut len, mut prev) = (0.0, 0.0, 0);
            for &x in a {
                len += dist(inst, prev, x);
                if x == 0 {
                    ensure!(prev != 0, "empty sub-route in {a:?}");
                    load = 0.0;
                } else {
                    ensure!(!seen[x], "customer {x} repeated");
                    seen[x] = true;
                    load += dem[x];
                    ensure!(load <= 1.0 + 1e-9, "sub-route demand {load} over capacity");
                }
                prev = x;
            }
            ensure!(seen[1..].iter().all(|&s| s), "customers left unserved: {a:?}");
            Ok(len + dist(inst, prev, 0))
        }
        Task::Op | Task::Pctsp => {
            ensure!(a.last() == Some(&0), "route must end at the depot: {a:?}");
            ensure!(a[..a.len() - 1].iter().all(|&x| x != 0), "depot visited mid-route: {a:?}");
            let prizes = inst.prizes.as_ref().ok_or("missing prizes")?;
            let (mut len, mut prev) = (0.0, 0);
            for &x in a {
                len += dist(inst, prev, x);
                if x != 0 {
                    ensure!(!seen[x], "customer {x} repeated");
                    seen[x] = true;
                }
                prev = x;
            }
            let prize: f64 = (1..n).filter(|&i| seen[i]).map(|i| prizes[i]).sum();
            if inst.task == Task::Op {
                let limit = inst.max_length.ok_or("missing max_length")?;
                ensure!(len <= limit + 1e-9, "length {len} over limit {limit}");
                return Ok(prize);
            }
            let min = inst.min_prize.ok_or("missing min_prize")?;
            if prizes.iter().sum::<f64>() >= min {
                ensure!(prize >= min - 1e-9, "prize {prize} below minimum {min}");
            } else {
                ensure!(seen[1..].iter().all(|&s| s), "unreachable target must visit everything");
            }
            let pen = inst.penalties.as_ref().ok_or("missing penalties")?;
            Ok(len + (1..n).filter(|&i| !seen[i]).map(|i| pen[i]).sum::<f64>())
        }
    }
}

/// All orderings of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// `Π_t p(a_t | s_t)` from single-step probabilities.
pub fn sequence_prob(params: &PolicyParams, inst: &Instance, actions: &[usize], alpha: f64, temp: f64) -> f64 {
    let emb = encode(params, inst).unwrap();
    let mut st = RolloutState::new(inst);
    let mut p = 1.0;
    for &a in actions {
        p *= decode_step(params, &emb, &st, alpha, temp, None).unwrap()[a];
        st.step(a).unwrap();
    }
    p
}

fn tour_reward(inst: &Instance, p: &[usize]) -> f64 {
    let n = p.len();
    -(0..n).map(|i| dist(inst, p[i], p[(i + 1) % n])).sum::<f64>()
}

fn expected_reward(params: &PolicyParams, inst: &Instance, perms: &[Vec<usize>]) -> f64 {
    perms
        .iter()
        .map(|p| sequence_prob(params, inst, p, 0.0, 1.0) * tour_reward(inst, p))
        .sum()
}

/// On a 4-node TSP, compare the shared-baseline REINFORCE estimator taken
/// over every trajectory (each weighted by its probability) with central
/// differences of the exhaustive expected reward. Returns the largest
/// absolute difference over every `stride`-th parameter entry and the number
/// of entries checked.
pub fn policy_gradient_gap(seed: u64, stride: usize) -> (f64, usize) {
    let perms = permutations(4);
    let params = tiny_policy(Task::Tsp, 20 + seed);
    let inst = generate(Task::Tsp, 4, 60 + seed).unwrap();

    let probs: Vec<f64> = perms.iter().map(|p| sequence_prob(&params, &inst, p, 0.0, 1.0)).collect();
    let rewards: Vec<f64> = perms.iter().map(|p| tour_reward(&inst, p)).collect();
    let b: f64 = probs.iter().zip(&rewards).map(|(p, r)| p * r).sum();
    let weights: Vec<f64> = probs.iter().zip(&rewards).map(|(p, r)| p * (r - b)).collect();
    let trajs: Vec<Trajectory> = perms
        .iter()
        .map(|p| Trajectory {
            view: 0,
            start: None,
            solution: Solution {
                actions: p.clone(),
                objective: 0.0,
                feasible: true,
            },
            log_prob: 0.0,
            records: records_for(&inst, p, false).unwrap(),
        })
        .collect();
    let mut tape = Tape::new();
    let bound = params.params().bind(&mut tape, true);
    let h = encode_on_tape(&mut tape, &params, &bound, &inst).unwrap();
    let cache = DecoderCache::prepare(&mut tape, &params, &bound, h).unwrap();
    let ll = weighted_trajectory_log_likelihood(&mut tape, &[cache], None, &trajs, &weights, 0.0, 1.0)
        .unwrap()
        .unwrap();
    let g = tape.backward(ll).unwrap();
    let estimator = bound.grads(&g, params.params());

    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let step = 1e-5;
    for (pi, t) in params.params().tensors().iter().enumerate() {
        for e in (0..t.numel()).step_by(stride) {
            let mut shifted = params.clone();
            shifted.params_mut().tensors_mut()[pi].data_mut()[e] = t.data()[e] + step;
            let up = expected_reward(&shifted, &inst, &perms);
            shifted.params_mut().tensors_mut()[pi].data_mut()[e] = t.data()[e] - step;
            let down = expected_reward(&shifted, &inst, &perms);
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max((numeric - estimator[pi].data()[e]).abs());
            checked += 1;
        }
    }
    (worst, checked)
}
