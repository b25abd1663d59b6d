use metasage_core::autodiff::{Adam, AdamConfig};
use metasage_core::domain::{generate, Instance, Task};
use metasage_core::eval::exact_small;
use metasage_core::policy::{DecodeConfig, ModelConfig, PolicyParams};
use metasage_core::rng::rng_from;
use metasage_core::train::{pretrain, train_step, validate, TrainConfig};
use metasage_core::Error;

fn tiny_model(task: Task) -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        heads: 4,
        layers: 1,
        ff_dim: 32,
        ..ModelConfig::new(task)
    }
}

fn tiny_train(task: Task, n: usize, epochs: usize, steps: usize) -> TrainConfig {
    TrainConfig {
        n_train: n,
        batch_instances: 8,
        multistart: 8,
        epochs,
        steps_per_epoch: steps,
        seed: 5,
        model: tiny_model(task),
        ..TrainConfig::new(task)
    }
}

#[test]
fn zero_learning_rate_keeps_parameters_bit_identical() {
    for task in [Task::Tsp, Task::Cvrp, Task::Op, Task::Pctsp] {
        let mut params = PolicyParams::new(tiny_model(task), &mut rng_from(1)).unwrap();
        let before = params.params().checksum();
        let mut adam = Adam::new(AdamConfig::with_lr(0.0), params.params());
        let batch: Vec<Instance> = (0..4).map(|s| generate(task, 10, s).unwrap()).collect();
        for step in 0..3 {
            let (cost, loss) = train_step(&mut params, &mut adam, &batch, 6, 9, step).unwrap();
            assert!(cost.is_finite() && loss.is_finite());
        }
        assert_eq!(params.params().checksum(), before, "{task}");
    }
}

#[test]
fn equal_rewards_give_no_update() {
    let tri = Instance::tsp(vec![[0.0, 0.0], [0.75, 0.0], [0.0, 1.0]]);
    let mut params = PolicyParams::new(tiny_model(Task::Tsp), &mut rng_from(2)).unwrap();
    let before = params.params().checksum();
    let mut adam = Adam::new(AdamConfig::with_lr(1e-2), params.params());
    let (cost, loss) = train_step(&mut params, &mut adam, &[tri.clone(), tri], 3, 0, 0).unwrap();
    assert_eq!(cost, 3.0);
    assert_eq!(loss, 0.0);
    assert_eq!(params.params().checksum(), before);
}

#[test]
fn pretraining_is_deterministic_and_finite() {
    for task in [Task::Tsp, Task::Cvrp, Task::Op, Task::Pctsp] {
        let cfg = tiny_train(task, 8, 2, 3);
        let a = pretrain(&cfg).unwrap();
        let b = pretrain(&cfg).unwrap();
        assert_eq!(a.params.params().checksum(), b.params.params().checksum(), "{task}");
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 6);
        assert!(a.log.iter().all(|r| r.loss.is_finite() && r.mean_cost.is_finite()));
        assert_eq!(a.log.last().unwrap().epoch, 1);
    }
}

#[test]
fn short_training_beats_the_untrained_policy() {
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        ..tiny_train(Task::Tsp, 8, 4, 25)
    };
    let trained = pretrain(&cfg).unwrap().params;
    let untrained = PolicyParams::new(cfg.model.clone(), &mut rng_from(77)).unwrap();
    let held_out: Vec<Instance> = (0..40).map(|s| generate(Task::Tsp, 8, 10_000 + s).unwrap()).collect();
    let opt: Vec<f64> = held_out.iter().map(|i| exact_small(i).unwrap().objective).collect();
    let decode = DecodeConfig::greedy(1, 1);
    let before = validate(&untrained, &held_out, Some(&opt), &decode).unwrap();
    let after = validate(&trained, &held_out, Some(&opt), &decode).unwrap();
    assert!(before.mean_gap_pct >= 0.0 && after.mean_gap_pct >= 0.0);
    assert!(
        after.mean_objective < before.mean_objective,
        "trained {} vs untrained {}",
        after.mean_objective,
        before.mean_objective
    );
}

#[test]
fn bad_configurations_are_rejected() {
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..tiny_train(Task::Tsp, 8, 1, 1)
    };
    assert!(matches!(pretrain(&cfg), Err(Error::Config(_))));
    let cfg = TrainConfig {
        model: tiny_model(Task::Cvrp),
        ..tiny_train(Task::Tsp, 8, 1, 1)
    };
    assert!(matches!(pretrain(&cfg), Err(Error::Config(_))));
    let params = PolicyParams::new(tiny_model(Task::Tsp), &mut rng_from(3)).unwrap();
    let data = vec![generate(Task::Tsp, 8, 0).unwrap()];
    assert!(validate(&params, &data, None, &DecodeConfig::greedy(1, 1)).is_err());
}
