use metasage_core::adapt::{AdaptMode, SageConfig};
use metasage_core::autodiff::{Tape, Tensor};
use metasage_core::domain::{generate, Instance, Task};
use metasage_core::policy::{encode, ModelConfig, PolicyParams};
use metasage_core::rng::rng_from;
use metasage_core::sml::{
    apply_sml, build_distill_set, distil_loss, j_distil, j_zero, load_distill_set, save_distill_set, train_sml,
    DistillRecord, SmlParams, SmlTrainConfig, ZeroShotConfig,
};
use proptest::prelude::*;
use rand::Rng;

const D: usize = 16;

fn tiny(seed: u64) -> PolicyParams {
    let cfg = ModelConfig {
        embed_dim: D,
        heads: 4,
        layers: 1,
        ff_dim: 32,
        ..ModelConfig::new(Task::Tsp)
    };
    PolicyParams::new(cfg, &mut rng_from(seed)).unwrap()
}

fn random(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn perturbed_sml(seed: u64) -> SmlParams {
    let mut phi = SmlParams::new(D, 16, &mut rng_from(seed));
    let mut rng = rng_from(seed + 1);
    for t in phi.params_mut().tensors_mut() {
        for x in t.data_mut() {
            *x += rng.gen_range(-0.2..0.2);
        }
    }
    phi
}

fn frob(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn tensor_bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

fn synthetic_records(seed: u64, count: usize) -> Vec<DistillRecord> {
    let mut rng = rng_from(seed);
    (0..count)
        .map(|i| {
            let n = [6, 8, 10][i % 3];
            let source = random(&mut rng, n, D, 1.0);
            let noise = random(&mut rng, n, D, 0.3);
            let target = Tensor::new(
                vec![n, D],
                source.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect(),
            )
            .unwrap();
            DistillRecord {
                id: format!("r{i}"),
                task: Task::Tsp,
                scale: n,
                seed: 1000 + i as u64,
                source,
                target,
            }
        })
        .collect()
}

#[test]
fn distill_set_has_one_record_per_instance_and_sane_shapes() {
    let policy = tiny(1);
    let cfg = SageConfig {
        iterations: 3,
        multistart: 6,
        adapter_hidden: 16,
        ..SageConfig::new(Task::Tsp, AdaptMode::Sage)
    };
    let scales = [6, 8, 10];
    let records = build_distill_set(&policy, &scales, 4, &cfg, 7).unwrap();
    assert_eq!(records.len(), scales.len() * 4);
    for r in &records {
        assert_eq!(r.source.shape(), &[r.scale, D]);
        assert_eq!(r.target.shape(), r.source.shape());
        assert!(r.target.data().iter().all(|x| x.is_finite()));
        let inst = r.instance().unwrap();
        assert_eq!(inst.n(), r.scale);
        assert_eq!(encode(&policy, &inst).unwrap().h, r.source);
    }

    let dir = std::env::temp_dir().join(format!("distill-props-{}", std::process::id()));
    save_distill_set(&dir, &records, cfg.iterations).unwrap();
    let (manifest, loaded) = load_distill_set(&dir).unwrap();
    assert_eq!(manifest.records.len(), records.len());
    assert_eq!(loaded, records);
    std::fs::remove_dir_all(&dir).unwrap();

    // K = 0 leaves the identity adapter, so targets equal sources.
    let k0 = build_distill_set(&policy, &[6], 3, &SageConfig { iterations: 0, ..cfg }, 7).unwrap();
    assert!(k0.iter().all(|r| r.target == r.source));
}

#[test]
fn distil_loss_is_nonnegative_and_zero_at_the_target() {
    let phi = perturbed_sml(2);
    let mut records = synthetic_records(3, 9);
    assert!(distil_loss(&phi, &records).unwrap() > 0.0);
    for r in &mut records {
        r.target = phi.apply_tensor(&r.source, r.scale).unwrap();
    }
    assert!(distil_loss(&phi, &records).unwrap().abs() < 1e-12);

    // at initialization the learner is the identity, so the loss is the
    // mean source-target distance
    let fresh = SmlParams::new(D, 16, &mut rng_from(4));
    let records = synthetic_records(5, 6);
    let expected = records.iter().map(|r| frob(&r.source, &r.target)).sum::<f64>() / 6.0;
    assert!((distil_loss(&fresh, &records).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn one_small_step_lowers_the_distil_loss() {
    for seed in 0..20 {
        let mut phi = perturbed_sml(10 + seed);
        let records = synthetic_records(seed, 6);
        let before = distil_loss(&phi, &records).unwrap();
        let mut tape = Tape::new();
        let bound = phi.params().bind(&mut tape, true);
        let refs: Vec<&DistillRecord> = records.iter().collect();
        let loss = j_distil(&mut tape, &phi, &bound, &refs).unwrap();
        let g = tape.backward(loss).unwrap();
        let grads = bound.grads(&g, phi.params());
        for (p, gr) in phi.params_mut().tensors_mut().iter_mut().zip(&grads) {
            for (x, gx) in p.data_mut().iter_mut().zip(gr.data()) {
                *x -= 1e-4 * gx;
            }
        }
        let after = distil_loss(&phi, &records).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn zero_shot_objective_only_reaches_the_learner() {
    let policy = tiny(6);
    let phi = perturbed_sml(7);
    let batch: Vec<(Instance, Tensor)> = (0..3)
        .map(|s| {
            let inst = generate(Task::Tsp, 9, s).unwrap();
            let h = encode(&policy, &inst).unwrap().h;
            (inst, h)
        })
        .collect();
    let before = policy.params().checksum();
    let mut tape = Tape::new();
    let bound = phi.params().bind(&mut tape, true);
    let pb = policy.params().bind_ids(&mut tape, &policy.decoder_ids(), true);
    let cfg = ZeroShotConfig {
        multistart: 6,
        lambda: 0.005,
    };
    let j = j_zero(&mut tape, &phi, &bound, &policy, &pb, &batch, &cfg, 1).unwrap().unwrap();
    let g = tape.backward(j).unwrap();
    let phi_grads = bound.grads(&g, phi.params());
    assert!(phi_grads.iter().any(|t| t.data().iter().any(|&x| x != 0.0)));
    assert_eq!(policy.params().checksum(), before);

    // equal rewards and no imitation: nothing to learn
    let tri = Instance::tsp(vec![[0.0, 0.0], [0.75, 0.0], [0.0, 1.0]]);
    let h = encode(&policy, &tri).unwrap().h;
    let mut tape = Tape::new();
    let bound = phi.params().bind(&mut tape, true);
    let pb = policy.params().bind_ids(&mut tape, &policy.decoder_ids(), false);
    let flat = ZeroShotConfig {
        multistart: 3,
        lambda: 0.0,
    };
    if let Some(j) = j_zero(&mut tape, &phi, &bound, &policy, &pb, &[(tri, h)], &flat, 2).unwrap() {
        let g = tape.backward(j).unwrap();
        for t in bound.grads(&g, phi.params()) {
            assert!(t.data().iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn training_leaves_policy_and_records_untouched() {
    let policy = tiny(8);
    let records: Vec<DistillRecord> = (0..6)
        .map(|i| {
            let n = 6 + i % 3;
            let inst = generate(Task::Tsp, n, 70 + i as u64).unwrap();
            let h = encode(&policy, &inst).unwrap().h;
            let mut target = h.clone();
            for x in target.data_mut() {
                *x *= 1.1;
            }
            DistillRecord {
                id: format!("r{i}"),
                task: Task::Tsp,
                scale: n,
                seed: 70 + i as u64,
                source: h,
                target,
            }
        })
        .collect();
    let snapshot: Vec<(Vec<u64>, Vec<u64>)> = records.iter().map(|r| (tensor_bits(&r.source), tensor_bits(&r.target))).collect();
    let policy_sum = policy.params().checksum();
    let cfg = SmlTrainConfig {
        epochs: 3,
        batch_size: 3,
        hidden: 16,
        zero_shot: ZeroShotConfig {
            multistart: 4,
            lambda: 0.005,
        },
        ..SmlTrainConfig::default()
    };
    let (_, log) = train_sml(&policy, &records, &cfg).unwrap();
    assert_eq!(log.len(), 3);
    assert!(log.iter().all(|r| r.loss.is_finite() && r.distil >= 0.0));
    assert_eq!(policy.params().checksum(), policy_sum);
    let after: Vec<(Vec<u64>, Vec<u64>)> = records.iter().map(|r| (tensor_bits(&r.source), tensor_bits(&r.target))).collect();
    assert_eq!(after, snapshot);
}

#[test]
fn pure_distillation_fits_the_targets() {
    let policy = tiny(9);
    let records = synthetic_records(20, 12);
    let cfg = SmlTrainConfig {
        beta: 0.0,
        epochs: 30,
        batch_size: 4,
        hidden: 16,
        ..SmlTrainConfig::default()
    };
    let init = SmlParams::new(D, 16, &mut metasage_core::rng::rng_at(cfg.seed, &[0]));
    let (phi, log) = train_sml(&policy, &records, &cfg).unwrap();
    let start = distil_loss(&init, &records).unwrap();
    let end = distil_loss(&phi, &records).unwrap();
    assert!(end < start, "{start} -> {end}");
    assert!(log.iter().all(|r| r.zero == 0.0));

    let (untrained, log) = train_sml(&policy, &records, &SmlTrainConfig { epochs: 0, ..cfg }).unwrap();
    assert!(log.is_empty());
    let h = &records[0].source;
    assert_eq!(&untrained.apply_tensor(h, records[0].scale).unwrap(), h);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn scale_learner_is_row_wise(seed in any::<u64>(), n in 2usize..12, shift in 0usize..12) {
        let phi = perturbed_sml(seed % 1000);
        let mut rng = rng_from(seed);
        let h = random(&mut rng, n, D, 1.0);
        let emb = metasage_core::policy::Embeddings::from_h(h.clone());
        let out = apply_sml(&phi, &emb, n).unwrap();
        prop_assert_eq!(out.h.shape(), h.shape());
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let permuted = Tensor::new(vec![n, D], perm.iter().flat_map(|&i| h.row(i).to_vec()).collect()).unwrap();
        let out_p = phi.apply_tensor(&permuted, n).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            for (a, b) in out_p.row(r).iter().zip(out.h.row(i)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
