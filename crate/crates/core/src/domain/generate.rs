use rand::Rng;

use super::{Instance, Task};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Prize target for generated PCTSP instances.
pub const PCTSP_MIN_PRIZE: f64 = 1.0;

/// Vehicle capacity for a CVRP instance with `customers` customers.
pub fn cvrp_capacity(customers: usize) -> f64 {
    match customers {
        10 => 20.0,
        20 => 30.0,
        50 => 40.0,
        100 => 50.0,
        c => (25.0 + c as f64 / 20.0).round(),
    }
}

/// OP route length limit for `n` nodes.
pub fn op_max_length(n: usize) -> f64 {
    4.0 * (n as f64 / 100.0).sqrt()
}

/// Sample a random instance with `n` nodes (depot included). Deterministic
/// in `(task, n, seed)`.
pub fn generate(task: Task, n: usize, seed: u64) -> Result<Instance> {
    if n < 2 {
        return Err(Error::Argument(format!("n must be at least 2, got {n}")));
    }
    let mut rng = rng_from(seed);
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let mut inst = Instance::tsp(coords);
    inst.task = task;
    inst.seed = seed;
    let customers = n - 1;
    match task {
        Task::Tsp => {}
        Task::Cvrp => {
            let cap = cvrp_capacity(customers);
            let mut d = vec![0.0; n];
            for v in d.iter_mut().skip(1) {
                *v = rng.gen_range(1..=9) as f64 / cap;
            }
            inst.demands = Some(d);
            inst.capacity = Some(cap);
        }
        Task::Pctsp => {
            let mut prizes = vec![0.0; n];
            let mut penalties = vec![0.0; n];
            let prize_scale = 4.0 / customers as f64;
            for i in 1..n {
                prizes[i] = rng.gen::<f64>() * prize_scale;
                penalties[i] = rng.gen::<f64>();
            }
            inst.prizes = Some(prizes);
            inst.penalties = Some(penalties);
            inst.min_prize = Some(PCTSP_MIN_PRIZE);
        }
        Task::Op => {
            inst.prizes = Some(op_prizes(&inst));
            inst.max_length = Some(op_max_length(n));
        }
    }
    Ok(inst)
}

/// `ρ_i = 1 + ⌊99 · d_0i / max_j d_0j⌋`, normalized by 100.
pub(crate) fn op_prizes(inst: &Instance) -> Vec<f64> {
    let n = inst.n();
    let d0: Vec<f64> = (0..n).map(|i| inst.dist(0, i)).collect();
    let max = d0[1..].iter().cloned().fold(0.0, f64::max);
    let mut prizes = vec![0.0; n];
    for i in 1..n {
        let ratio = if max > 0.0 { d0[i] / max } else { 0.0 };
        prizes[i] = (1.0 + (99.0 * ratio).floor()) / 100.0;
    }
    prizes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_instances() {
        assert!(generate(Task::Tsp, 1, 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        for task in Task::ALL {
            assert_eq!(generate(task, 12, 99).unwrap(), generate(task, 12, 99).unwrap());
            assert_ne!(generate(task, 12, 99).unwrap(), generate(task, 12, 100).unwrap());
            generate(task, 12, 99).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn cvrp_demands_are_integer_multiples() {
        let inst = generate(Task::Cvrp, 21, 5).unwrap();
        let cap = inst.capacity.unwrap();
        assert_eq!(cap, 30.0);
        for &d in &inst.demands.as_ref().unwrap()[1..] {
            let raw = d * cap;
            assert!((raw - raw.round()).abs() < 1e-9 && (1.0..=9.0).contains(&raw.round()));
        }
    }

    #[test]
    fn op_prize_extremes() {
        let mut inst = Instance::tsp(vec![[0.5, 0.5], [0.5, 0.5], [1.0, 1.0], [0.6, 0.5]]);
        inst.task = Task::Op;
        let p = op_prizes(&inst);
        assert_eq!(p[1], 0.01, "node on the depot gets raw prize 1");
        assert_eq!(p[2], 1.0, "farthest node gets raw prize 100");
        assert_eq!(p[0], 0.0);
    }
}
