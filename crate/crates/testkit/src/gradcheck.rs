//! Analytic gradients of tape ops against central finite differences.

use metasage_core::autodiff::{Tape, Tensor, Var};
use metasage_core::rng::{rng_from, SeedRng};
use metasage_core::Result;
use rand::Rng;

pub const STEP: f64 = 1e-5;

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;
type Make = dyn Fn(&mut SeedRng) -> Vec<Tensor>;

const MASK: [bool; 15] = [
    false, true, false, false, true, true, false, false, false, false, false, true, false, false, false,
];

pub fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

/// Scalar loss: the op output contracted with fixed random weights.
fn loss(inputs: &[Tensor], weights: &[f64], build: &Build, grads: bool) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if grads { tape.param(t.clone()) } else { tape.constant(t.clone()) })
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let l = tape.weighted_sum(out, &weights[..tape.value(out).numel()]).unwrap();
    let value = tape.value(l).item().unwrap();
    if !grads {
        return (value, Vec::new());
    }
    let g = tape.backward(l).unwrap();
    (value, vars.iter().map(|&v| g.wrt(&tape, v)).collect())
}

/// `|a − n| / max(|a|, |n|, 1e-3)`: relative, with an absolute floor for
/// entries whose true derivative is zero.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Worst relative error of one op over `trials` random draws.
pub fn worst_error(seed: u64, trials: usize, make: &Make, build: &Build) -> f64 {
    let mut rng = rng_from(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inputs = make(&mut rng);
        let weights: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, analytic) = loss(&inputs, &weights, build, true);
        for (ti, t) in inputs.iter().enumerate() {
            for e in 0..t.numel() {
                let mut shifted = inputs.clone();
                shifted[ti].data_mut()[e] = t.data()[e] + STEP;
                let (up, _) = loss(&shifted, &weights, build, false);
                shifted[ti].data_mut()[e] = t.data()[e] - STEP;
                let (down, _) = loss(&shifted, &weights, build, false);
                let numeric = (up - down) / (2.0 * STEP);
                worst = worst.max(rel_err(analytic[ti].data()[e], numeric));
            }
        }
    }
    worst
}

/// Inputs kept away from the kink of relu.
fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape).map(|x| if x.abs() < 1e-3 { x + 0.01 } else { x })
}

fn one(shape: &'static [usize]) -> Box<Make> {
    Box::new(move |r| vec![uniform(r, shape)])
}

fn two(a: &'static [usize], b: &'static [usize]) -> Box<Make> {
    Box::new(move |r| vec![uniform(r, a), uniform(r, b)])
}

/// Every differentiable op (and a small composite), as `(name, inputs, op)`.
pub fn cases() -> Vec<(&'static str, Box<Make>, Box<Build>)> {
    vec![
        ("matmul", two(&[3, 4], &[4, 2]), Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("matmul_nt", two(&[3, 4], &[5, 4]), Box::new(|t, v| t.matmul_nt(v[0], v[1]))),
        ("add", two(&[3, 4], &[3, 4]), Box::new(|t, v| t.add(v[0], v[1]))),
        ("add row broadcast", two(&[3, 4], &[1, 4]), Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", two(&[3, 4], &[3, 4]), Box::new(|t, v| t.sub(v[0], v[1]))),
        ("sub scalar broadcast", two(&[3, 4], &[1, 1]), Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", two(&[3, 4], &[3, 4]), Box::new(|t, v| t.mul(v[0], v[1]))),
        ("mul row broadcast", two(&[3, 4], &[1, 4]), Box::new(|t, v| t.mul(v[0], v[1]))),
        ("scale", one(&[2, 5]), Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        ("tanh", one(&[2, 5]), Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("relu", Box::new(|r| vec![away_from_zero(r, &[2, 5])]), Box::new(|t, v| Ok(t.relu(v[0])))),
        ("exp", one(&[2, 5]), Box::new(|t, v| Ok(t.exp(v[0])))),
        (
            "log",
            Box::new(|r| vec![uniform(r, &[2, 5]).map(|x| x.abs() + 0.1)]),
            Box::new(|t, v| t.log(v[0])),
        ),
        ("softmax_temp", one(&[3, 5]), Box::new(|t, v| t.softmax_temp(v[0], 0.7, None))),
        ("softmax_temp masked", one(&[3, 5]), Box::new(|t, v| t.softmax_temp(v[0], 1.3, Some(&MASK)))),
        ("log_softmax_temp", one(&[3, 5]), Box::new(|t, v| t.log_softmax_temp(v[0], 0.5, None))),
        (
            "log_softmax_temp masked",
            one(&[3, 5]),
            Box::new(|t, v| {
                let l = t.log_softmax_temp(v[0], 2.0, Some(&MASK))?;
                // masked entries are constants; read only the live ones
                let w: Vec<f64> = MASK.iter().enumerate().map(|(i, &m)| if m { 0.0 } else { 1.0 + i as f64 / 7.0 }).collect();
                t.weighted_sum(l, &w)
            }),
        ),
        ("gather_rows", one(&[4, 3]), Box::new(|t, v| t.gather_rows(v[0], &[2, 0, 2, 3]))),
        ("pick_per_row", one(&[4, 3]), Box::new(|t, v| t.pick_per_row(v[0], &[1, 0, 2, 2]))),
        ("sum", one(&[3, 3]), Box::new(|t, v| Ok(t.sum(v[0])))),
        (
            "weighted_sum",
            one(&[2, 3]),
            Box::new(|t, v| t.weighted_sum(v[0], &[0.5, -1.0, 2.0, 0.0, 1.5, -0.25])),
        ),
        ("mean_rows", one(&[4, 3]), Box::new(|t, v| Ok(t.mean_rows(v[0])))),
        ("slice_cols", one(&[3, 6]), Box::new(|t, v| t.slice_cols(v[0], 2, 3))),
        ("concat_cols", two(&[3, 2], &[3, 4]), Box::new(|t, v| t.concat_cols(&[v[0], v[1], v[0]]))),
        ("norm_cols", one(&[5, 3]), Box::new(|t, v| Ok(t.norm_cols(v[0], 1e-5)))),
        ("frobenius_norm", one(&[3, 4]), Box::new(|t, v| Ok(t.frobenius_norm(v[0])))),
        (
            "two-layer relu mlp",
            Box::new(|r| vec![uniform(r, &[4, 3]), uniform(r, &[3, 5]), uniform(r, &[1, 5]), uniform(r, &[5, 2])]),
            Box::new(|t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.add(h, v[2])?;
                let h = t.tanh(h);
                let h = t.relu(h);
                let o = t.matmul(h, v[3])?;
                let o = t.log_softmax_temp(o, 1.0, None)?;
                Ok(t.sum(o))
            }),
        ),
    ]
}

/// Worst relative error per op.
pub fn run_suite(trials: usize) -> Vec<(&'static str, f64)> {
    cases()
        .into_iter()
        .enumerate()
        .map(|(i, (name, make, build))| (name, worst_error(1 + i as u64, trials, &*make, &*build)))
        .collect()
}
