use metasage_core::domain::{generate, Task};
use metasage_core::policy::{rollout, DecodeConfig, DecodeMode};
use metasage_core::rng::{derive_seed, rng_from};
use rand::Rng;

use crate::oracle::check_solution;
use crate::tiny_policy;

/// Sample at least `count` rollouts from randomly initialized policies on
/// instances with 5 to 20 nodes, with random bias and temperature, and check
/// every one. Returns `(rollouts, instances)`.
pub fn random_policy_rollouts(task: Task, count: usize, seed: u64) -> Result<(usize, usize), String> {
    let mut rng = rng_from(seed);
    let (mut done, mut i) = (0usize, 0u64);
    while done < count {
        let params = tiny_policy(task, derive_seed(7, i % 16));
        let n = rng.gen_range(5..=20);
        let inst = generate(task, n, derive_seed(seed, i)).map_err(|e| e.to_string())?;
        let cfg = DecodeConfig {
            temperature: rng.gen_range(0.3..3.0),
            alpha: rng.gen_range(0.0..2.0),
            mode: DecodeMode::Sample,
            multistart: 10,
            augmentations: 1 + (i % 2) as usize,
        };
        let trajs = rollout(&params, &inst, &cfg, None, &mut rng).map_err(|e| format!("{task} n={n}: {e}"))?;
        for t in trajs {
            let obj = check_solution(&inst, &t.solution).map_err(|e| format!("{task} n={n}: {e}"))?;
            if (obj - t.solution.objective).abs() > 1e-9 {
                return Err(format!("{task}: objective {} but recomputed {obj}", t.solution.objective));
            }
            if !(t.log_prob.is_finite() && t.log_prob <= 0.0) {
                return Err(format!("{task}: log-probability {}", t.log_prob));
            }
            done += 1;
        }
        i += 1;
    }
    Ok((done, i as usize))
}
