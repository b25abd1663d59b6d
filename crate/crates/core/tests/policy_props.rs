use metasage_core::domain::{generate, Instance, RolloutState, Task};
use metasage_core::policy::{decode_step, encode, sample_view, DecodeMode, PolicyParams};
use metasage_core::rng::rng_from;
use metasage_testkit::oracle::{dist, permutations, policy_gradient_gap, sequence_prob};
use metasage_testkit::rollouts::random_policy_rollouts;
use proptest::prelude::*;
use rand::Rng;

fn tiny(task: Task, seed: u64) -> PolicyParams {
    metasage_testkit::tiny_policy(task, seed)
}

#[test]
fn random_policy_rollouts_are_feasible() {
    for (ti, task) in Task::ALL.into_iter().enumerate() {
        let (done, instances) = random_policy_rollouts(task, 10_000, 100 + ti as u64).unwrap();
        assert!(done >= 10_000);
        println!("{task}: {done} feasible rollouts over {instances} instances");
    }
}

#[test]
fn five_node_trajectory_probabilities_sum_to_one() {
    for seed in 0..5 {
        let params = tiny(Task::Tsp, seed);
        let inst = generate(Task::Tsp, 5, 40 + seed).unwrap();
        let perms = permutations(5);
        assert_eq!(perms.len(), 120);
        let total: f64 = perms.iter().map(|p| sequence_prob(&params, &inst, p, 0.0, 1.0)).sum();
        assert!((total - 1.0).abs() < 1e-12, "sum = {total}");
    }
}

#[test]
fn stored_log_prob_matches_step_product() {
    let params = tiny(Task::Tsp, 3);
    let inst = generate(Task::Tsp, 7, 3).unwrap();
    let emb = encode(&params, &inst).unwrap();
    let starts: Vec<Option<usize>> = (0..7).map(Some).collect();
    let trajs = sample_view(&params, None, &inst, &emb.h, &starts, DecodeMode::Sample, 0.4, 0.8, &mut rng_from(1)).unwrap();
    for t in trajs {
        let mut st = RolloutState::new(&inst);
        st.step(t.solution.actions[0]).unwrap();
        let mut lp = 0.0;
        for &a in &t.solution.actions[1..] {
            lp += decode_step(&params, &emb, &st, 0.4, 0.8, None).unwrap()[a].ln();
            st.step(a).unwrap();
        }
        assert!((lp - t.log_prob).abs() < 1e-10);
    }
}

#[test]
fn shared_baseline_estimator_matches_exhaustive_gradient() {
    for seed in 0..3 {
        let (worst, checked) = policy_gradient_gap(seed, 5);
        assert!(checked > 100);
        assert!(worst < 1e-6, "max abs difference {worst:e} over {checked} entries");
    }
}

fn random_state<'a>(inst: &'a Instance, steps: usize, rng: &mut impl Rng) -> Option<RolloutState<'a>> {
    let mut st = RolloutState::new(inst);
    for _ in 0..steps {
        let m = st.feasible_mask().ok()?;
        let open: Vec<usize> = (0..m.len()).filter(|&i| m[i]).collect();
        st.step(open[rng.gen_range(0..open.len())]).ok()?;
        if st.is_terminal() {
            return None;
        }
    }
    Some(st)
}

fn cfg() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn more_locality_bias_never_favours_the_farthest_node(
        task_ix in 0usize..4,
        n in 5usize..12,
        seed in 0u64..10_000,
        steps in 1usize..4,
        a1 in 0.0f64..3.0,
        extra in 0.0f64..3.0,
        temp in 0.2f64..3.0,
    ) {
        let task = Task::ALL[task_ix];
        let params = tiny(task, seed % 7);
        let inst = generate(task, n, seed).unwrap();
        let mut rng = rng_from(seed);
        let Some(st) = random_state(&inst, steps, &mut rng) else { return Ok(()) };
        let emb = encode(&params, &inst).unwrap();
        let mask = st.feasible_mask().unwrap();
        let cur = st.current().unwrap();
        let far = (0..n)
            .filter(|&j| mask[j])
            .max_by(|&i, &j| dist(&inst, cur, i).total_cmp(&dist(&inst, cur, j)))
            .unwrap();
        let p1 = decode_step(&params, &emb, &st, a1, temp, None).unwrap()[far];
        let p2 = decode_step(&params, &emb, &st, a1 + extra, temp, None).unwrap()[far];
        prop_assert!(p2 <= p1 + 1e-12, "p(far) rose from {p1} to {p2}");
    }
}

#[test]
fn vanishing_temperature_sampling_equals_greedy() {
    let (mut agree, mut total) = (0usize, 0usize);
    for i in 0..300u64 {
        let task = Task::ALL[(i % 4) as usize];
        let params = tiny(task, i % 5);
        let inst = generate(task, 6 + (i % 10) as usize, 900 + i).unwrap();
        let emb = encode(&params, &inst).unwrap();
        // A fresh TSP state is an exact tie (normalized embeddings have zero
        // mean), so TSP decoding starts from fixed first nodes.
        let starts: Vec<Option<usize>> = match task {
            Task::Tsp => (0..4).map(Some).collect(),
            _ => vec![None; 4],
        };
        let alpha = (i % 3) as f64 * 0.5;
        let greedy = sample_view(&params, None, &inst, &emb.h, &starts, DecodeMode::Greedy, alpha, 1.0, &mut rng_from(i)).unwrap();
        let cold = sample_view(&params, None, &inst, &emb.h, &starts, DecodeMode::Sample, alpha, 1e-6, &mut rng_from(i + 1)).unwrap();
        for (g, c) in greedy.iter().zip(&cold) {
            // Both follow the same states until the first disagreement.
            for (rg, rc) in g.records.iter().zip(&c.records) {
                total += 1;
                if rg.action == rc.action {
                    agree += 1;
                } else {
                    break;
                }
            }
        }
    }
    let rate = agree as f64 / total as f64;
    println!("greedy agreement {agree}/{total}");
    assert!(rate >= 0.999, "agreement {rate}");
}
