//! Analytic gradients of every tape op against central finite differences.

use std::time::Instant;

use metasage_core::autodiff::{Tape, Tensor};
use metasage_core::rng::rng_from;
use metasage_testkit::gradcheck::{run_suite, uniform};
use proptest::prelude::*;

const TOL: f64 = 1e-5;
const TRIALS: usize = 100;

#[test]
fn every_op_matches_finite_differences() {
    let t0 = Instant::now();
    let results = run_suite(TRIALS);
    let secs = t0.elapsed().as_secs_f64();
    for (name, worst) in &results {
        println!("{name:<26} max relative error {worst:.2e}");
    }
    let bad: Vec<_> = results.iter().filter(|(_, w)| !(*w < TOL)).collect();
    assert!(bad.is_empty(), "over tolerance: {bad:?}");
    assert!(results.len() >= 26);
    println!("finite-difference suite: {secs:.2}s");
    assert!(secs < 60.0, "suite took {secs:.1}s");
}

#[test]
fn backward_is_additive_over_losses() {
    let mut rng = rng_from(30);
    for _ in 0..20 {
        let x = uniform(&mut rng, &[3, 4]);
        let w = uniform(&mut rng, &[4, 2]);
        let grad = |which: u8| {
            let mut t = Tape::new();
            let xv = t.param(x.clone());
            let wv = t.constant(w.clone());
            let a = t.matmul(xv, wv).unwrap();
            let a = t.tanh(a);
            let a = t.sum(a);
            let b = t.exp(xv);
            let b = t.frobenius_norm(b);
            let l = match which {
                0 => a,
                1 => b,
                _ => t.add(a, b).unwrap(),
            };
            t.backward(l).unwrap().wrt(&t, xv)
        };
        let (ga, gb, gab) = (grad(0), grad(1), grad(2));
        for i in 0..gab.numel() {
            assert!((ga.data()[i] + gb.data()[i] - gab.data()[i]).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn softmax_is_a_probability_vector(
        logits in prop::collection::vec(-50.0f64..50.0, 1..12),
        mask_bits in prop::collection::vec(any::<bool>(), 12),
        temp in 0.01f64..5.0,
    ) {
        let n = logits.len();
        let mut mask = mask_bits[..n].to_vec();
        mask[n - 1] = false;
        let mut t = Tape::new();
        let u = t.constant(Tensor::vector(logits));
        let p = t.softmax_temp(u, temp, Some(&mask)).unwrap();
        let p = t.value(p).data();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for (pi, &m) in p.iter().zip(&mask) {
            prop_assert!(*pi >= 0.0);
            if m {
                prop_assert_eq!(*pi, 0.0);
            }
        }
    }
}
