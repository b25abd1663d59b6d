use rand::Rng;

use crate::autodiff::{Bound, ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::policy::Embeddings;

/// Scale meta-learner `g_φ(h, N)`: a scale encoder on `N/100` and a residual
/// ReLU combiner over `h_i + s(N)`. The combiner output layer starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SmlParams {
    set: ParamSet,
    ids: [ParamId; 8],
}

const NAMES: [&str; 8] = [
    "sml.scale.w1",
    "sml.scale.b1",
    "sml.scale.w2",
    "sml.scale.b2",
    "sml.comb.w1",
    "sml.comb.b1",
    "sml.comb.w2",
    "sml.comb.b2",
];

/// Scalar fed to the scale encoder.
pub fn scale_feature(n: usize) -> f64 {
    n as f64 / 100.0
}

impl SmlParams {
    pub fn new(width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut set = ParamSet::new();
        set.push_uniform(NAMES[0], &[1, hidden], 1, rng);
        set.push_uniform(NAMES[1], &[1, hidden], 1, rng);
        set.push_uniform(NAMES[2], &[hidden, width], hidden, rng);
        set.push_uniform(NAMES[3], &[1, width], hidden, rng);
        set.push_uniform(NAMES[4], &[width, hidden], width, rng);
        set.push_uniform(NAMES[5], &[1, hidden], width, rng);
        set.push(NAMES[6], Tensor::zeros(&[hidden, width]));
        set.push(NAMES[7], Tensor::zeros(&[1, width]));
        Self::from_param_set(set).expect("fresh layout is consistent")
    }

    pub fn from_param_set(set: ParamSet) -> Result<Self> {
        if set.names() != NAMES {
            return Err(Error::Checkpoint(format!("scale learner tensors {:?}", set.names())));
        }
        let ids = [0, 1, 2, 3, 4, 5, 6, 7].map(ParamId);
        let hs = set.get(ids[0]).cols();
        let width = set.get(ids[2]).cols();
        let hc = set.get(ids[4]).cols();
        let expect: [&[usize]; 8] = [
            &[1, hs],
            &[1, hs],
            &[hs, width],
            &[1, width],
            &[width, hc],
            &[1, hc],
            &[hc, width],
            &[1, width],
        ];
        for (id, shape) in ids.iter().zip(expect) {
            if set.get(*id).shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    NAMES[id.0],
                    set.get(*id).shape(),
                    shape
                )));
            }
        }
        Ok(SmlParams { set, ids })
    }

    pub fn width(&self) -> usize {
        self.set.get(self.ids[2]).cols()
    }

    pub fn params(&self) -> &ParamSet {
        &self.set
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    /// `h^S = h + comb(h + s(n))` on the tape.
    pub fn apply_on_tape(&self, tape: &mut Tape, bound: &Bound, h: Var, n: usize) -> Result<Var> {
        if tape.value(h).cols() != self.width() {
            return Err(Error::Config(format!(
                "embedding width {} does not match scale learner width {}",
                tape.value(h).cols(),
                self.width()
            )));
        }
        let v = |i: usize| bound.var(self.ids[i]);
        let f = tape.constant(Tensor::matrix(1, 1, vec![scale_feature(n)])?);
        let s = tape.matmul(f, v(0))?;
        let s = tape.add(s, v(1))?;
        let s = tape.relu(s);
        let s = tape.matmul(s, v(2))?;
        let s = tape.add(s, v(3))?;
        let z = tape.add(h, s)?;
        let z = tape.matmul(z, v(4))?;
        let z = tape.add(z, v(5))?;
        let z = tape.relu(z);
        let z = tape.matmul(z, v(6))?;
        let z = tape.add(z, v(7))?;
        tape.add(h, z)
    }

    pub fn apply_tensor(&self, h: &Tensor, n: usize) -> Result<Tensor> {
        if n < 2 {
            return Err(Error::Argument(format!("scale must be at least 2, got {n}")));
        }
        let mut tape = Tape::new();
        let bound = self.set.bind(&mut tape, false);
        let hv = tape.constant(h.clone());
        let out = self.apply_on_tape(&mut tape, &bound, hv, n)?;
        Ok(tape.value(out).clone())
    }
}

/// Scale-conditioned embeddings for a problem of `n` nodes.
pub fn apply_sml(phi: &SmlParams, emb: &Embeddings, n: usize) -> Result<Embeddings> {
    Ok(Embeddings::from_h(phi.apply_tensor(&emb.h, n)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn identity_at_init_and_layout_roundtrip() {
        let phi = SmlParams::new(8, 8, &mut rng_from(2));
        let h = Tensor::matrix(3, 8, (0..24).map(|i| (i as f64).cos()).collect()).unwrap();
        let emb = Embeddings::from_h(h.clone());
        assert_eq!(apply_sml(&phi, &emb, 50).unwrap().h, h);
        assert!(apply_sml(&phi, &emb, 1).is_err());
        let narrow = Embeddings::from_h(Tensor::zeros(&[3, 4]));
        assert!(matches!(apply_sml(&phi, &narrow, 20), Err(Error::Config(_))));
        assert_eq!(SmlParams::from_param_set(phi.params().clone()).unwrap(), phi);
    }

    #[test]
    fn perturbed_learner_depends_on_scale() {
        let mut phi = SmlParams::new(8, 8, &mut rng_from(2));
        for x in phi.params_mut().get_mut(ParamId(6)).data_mut() {
            *x = 0.1;
        }
        let h = Tensor::matrix(2, 8, (0..16).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = phi.apply_tensor(&h, 20).unwrap();
        let b = phi.apply_tensor(&h, 50).unwrap();
        assert_ne!(a, b);
    }
}
