use super::params::{feature_dim, PolicyParams};
use crate::autodiff::{Bound, Tape, Tensor, Var};
use crate::domain::{Instance, Task};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-5;

/// Per-node input features: coordinates plus the task payload, and a depot
/// indicator for depot tasks.
pub fn node_features(inst: &Instance) -> Tensor {
    let n = inst.n();
    let f = feature_dim(inst.task);
    let mut data = Vec::with_capacity(n * f);
    for i in 0..n {
        data.extend_from_slice(&inst.coords[i]);
        let is_depot = if i == 0 { 1.0 } else { 0.0 };
        match inst.task {
            Task::Tsp => {}
            Task::Cvrp => data.extend([inst.demands.as_ref().unwrap()[i], is_depot]),
            Task::Op => data.extend([inst.prizes.as_ref().unwrap()[i], is_depot]),
            Task::Pctsp => data.extend([
                inst.prizes.as_ref().unwrap()[i],
                inst.penalties.as_ref().unwrap()[i],
                is_depot,
            ]),
        }
    }
    Tensor::from_parts(vec![n, f], data)
}

/// Encoder forward pass on the tape. `bound` holds the policy tensors (as
/// trainable leaves or constants). Returns the `N×d` node embeddings.
pub fn encode_on_tape(tape: &mut Tape, p: &PolicyParams, bound: &Bound, inst: &Instance) -> Result<Var> {
    let cfg = p.config();
    if inst.task != cfg.task {
        return Err(Error::Config(format!(
            "policy trained for {} cannot encode a {} instance",
            cfg.task, inst.task
        )));
    }
    let ids = &p.ids;
    let x = tape.constant(node_features(inst));
    let xw = tape.matmul(x, bound.var(ids.in_w))?;
    let mut h = tape.add(xw, bound.var(ids.in_b))?;
    let dk = cfg.key_dim();
    let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
    for l in &ids.layers {
        let q = tape.matmul(h, bound.var(l.wq))?;
        let k = tape.matmul(h, bound.var(l.wk))?;
        let v = tape.matmul(h, bound.var(l.wv))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let qh = tape.slice_cols(q, head * dk, dk)?;
            let kh = tape.slice_cols(k, head * dk, dk)?;
            let vh = tape.slice_cols(v, head * dk, dk)?;
            let s = tape.matmul_nt(qh, kh)?;
            let s = tape.scale(s, inv_sqrt_dk);
            let a = tape.softmax_temp(s, 1.0, None)?;
            heads.push(tape.matmul(a, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let mha = tape.matmul(cat, bound.var(l.wo))?;
        let r = tape.add(h, mha)?;
        h = affine_norm(tape, r, bound.var(l.norm1_g), bound.var(l.norm1_b))?;
        let f1 = tape.matmul(h, bound.var(l.ff1_w))?;
        let f1 = tape.add(f1, bound.var(l.ff1_b))?;
        let f1 = tape.relu(f1);
        let f2 = tape.matmul(f1, bound.var(l.ff2_w))?;
        let f2 = tape.add(f2, bound.var(l.ff2_b))?;
        let r = tape.add(h, f2)?;
        h = affine_norm(tape, r, bound.var(l.norm2_g), bound.var(l.norm2_b))?;
    }
    Ok(h)
}

fn affine_norm(tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let n = tape.norm_cols(x, NORM_EPS);
    let s = tape.mul(n, gamma)?;
    tape.add(s, beta)
}

/// Node context embeddings of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    /// `N×d` node embeddings.
    pub h: Tensor,
    /// Row mean of `h`.
    pub h_mean: Vec<f64>,
}

impl Embeddings {
    pub fn from_h(h: Tensor) -> Self {
        let (n, d) = (h.rows(), h.cols());
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, x) in mean.iter_mut().zip(h.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        Embeddings { h, h_mean: mean }
    }

    pub fn n(&self) -> usize {
        self.h.rows()
    }

    /// Depot embedding, or for TSP the embedding of the given first node.
    pub fn anchor(&self, node: usize) -> &[f64] {
        self.h.row(node)
    }
}

/// Encoder forward without gradients.
pub fn encode(p: &PolicyParams, inst: &Instance) -> Result<Embeddings> {
    let mut tape = Tape::new();
    let bound = p.params().bind(&mut tape, false);
    let h = encode_on_tape(&mut tape, p, &bound, inst)?;
    let h = tape.value(h).clone();
    if !h.is_finite() {
        return Err(Error::Contract("encoder produced non-finite embeddings".into()));
    }
    Ok(Embeddings::from_h(h))
}
