use metasage_core::domain::{evaluate, generate, locality_distances, RolloutState, Task};
use metasage_core::rng::rng_from;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn task_strategy() -> impl Strategy<Value = Task> {
    prop_oneof![Just(Task::Tsp), Just(Task::Cvrp), Just(Task::Op), Just(Task::Pctsp)]
}

/// Uniformly random feasible rollout.
fn random_actions(inst: &metasage_core::domain::Instance, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    let mut st = RolloutState::new(inst);
    while !st.is_terminal() {
        let mask = st.feasible_mask().unwrap();
        let open: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        st.step(*open.choose(&mut rng).unwrap()).unwrap();
    }
    st.partial().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn distances_match_a_full_matrix(task in task_strategy(), n in 2usize..30, seed in any::<u64>()) {
        let inst = generate(task, n, seed).unwrap();
        let matrix: Vec<Vec<f64>> = inst
            .coords
            .iter()
            .map(|a| inst.coords.iter().map(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()).collect())
            .collect();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((inst.dist(i, j) - matrix[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tsp_cost_is_rotation_invariant(n in 3usize..25, seed in any::<u64>(), shift in 0usize..25) {
        let inst = generate(Task::Tsp, n, seed).unwrap();
        let mut tour: Vec<usize> = (0..n).collect();
        tour.shuffle(&mut rng_from(seed));
        let cost = evaluate(&inst, &tour).unwrap().objective;
        tour.rotate_left(shift % n);
        let rotated = evaluate(&inst, &tour).unwrap().objective;
        prop_assert!((cost - rotated).abs() < 1e-9);
        let direct: f64 = (0..n).map(|i| {
            let (a, b) = (inst.coords[tour[i]], inst.coords[tour[(i + 1) % n]]);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        }).sum();
        prop_assert!((cost - direct).abs() < 1e-9);
    }

    #[test]
    fn reward_signs(task in task_strategy(), n in 3usize..20, seed in any::<u64>()) {
        let inst = generate(task, n, seed).unwrap();
        let sol = evaluate(&inst, &random_actions(&inst, seed)).unwrap();
        if task == Task::Op {
            prop_assert!(sol.reward(task) >= 0.0);
        } else {
            prop_assert!(sol.reward(task) <= 0.0);
        }
    }

    #[test]
    fn tsp_locality_distances_are_zero_before_the_first_move(n in 3usize..20, seed in any::<u64>()) {
        let inst = generate(Task::Tsp, n, seed).unwrap();
        prop_assert!(locality_distances(&RolloutState::new(&inst)).iter().all(|&x| x == 0.0));
    }
}

#[test]
fn op_mask_agrees_with_brute_force_reachability() {
    let mut rng = rng_from(4);
    for seed in 0..300 {
        let inst = generate(Task::Op, 5, seed).unwrap();
        let limit = inst.max_length.unwrap();
        let mut st = RolloutState::new(&inst);
        let mut walked: Vec<usize> = vec![0];
        while !st.is_terminal() {
            let mask = st.feasible_mask().unwrap();
            let len: f64 = walked.windows(2).map(|w| inst.dist(w[0], w[1])).sum();
            let cur = *walked.last().unwrap();
            for j in 1..5 {
                let reachable = !walked.contains(&j) && len + inst.dist(cur, j) + inst.dist(j, 0) <= limit + 1e-9;
                assert_eq!(mask[j], reachable, "seed {seed} node {j} after {walked:?}");
            }
            let open: Vec<usize> = (0..5).filter(|&j| mask[j]).collect();
            let a = open[rng.gen_range(0..open.len())];
            st.step(a).unwrap();
            walked.push(a);
        }
        let total: f64 = walked.windows(2).map(|w| inst.dist(w[0], w[1])).sum();
        assert!(total <= limit + 1e-9);
    }
}
