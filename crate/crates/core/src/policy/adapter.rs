use rand::Rng;

use crate::autodiff::{Bound, ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Residual two-layer ReLU adapter `x + W2·relu(W1·x + b1) + b2`, applied to
/// the glimpse query. The output layer starts at zero so a fresh adapter is
/// the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaAdapter {
    set: ParamSet,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl EtaAdapter {
    pub fn new(width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut set = ParamSet::new();
        let w1 = set.push_uniform("eta.w1", &[width, hidden], width, rng);
        let b1 = set.push_uniform("eta.b1", &[1, hidden], width, rng);
        let w2 = set.push("eta.w2", Tensor::zeros(&[hidden, width]));
        let b2 = set.push("eta.b2", Tensor::zeros(&[1, width]));
        EtaAdapter { set, w1, b1, w2, b2 }
    }

    /// Rebuild from stored tensors.
    pub fn from_param_set(set: ParamSet) -> Result<Self> {
        let names = ["eta.w1", "eta.b1", "eta.w2", "eta.b2"];
        if set.names() != names {
            return Err(Error::Checkpoint(format!(
                "adapter tensors {:?}, expected {:?}",
                set.names(),
                names
            )));
        }
        let [w1, b1, w2, b2] = [0, 1, 2, 3].map(ParamId);
        let (width, hidden) = (set.get(w1).rows(), set.get(w1).cols());
        let ok = set.get(b1).shape() == [1, hidden]
            && set.get(w2).shape() == [hidden, width]
            && set.get(b2).shape() == [1, width];
        if !ok {
            return Err(Error::Checkpoint("adapter tensor shapes are inconsistent".into()));
        }
        Ok(EtaAdapter { set, w1, b1, w2, b2 })
    }

    pub fn width(&self) -> usize {
        self.set.get(self.w1).rows()
    }

    pub fn params(&self) -> &ParamSet {
        &self.set
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    pub fn apply_on_tape(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let z = tape.matmul(x, bound.var(self.w1))?;
        let z = tape.add(z, bound.var(self.b1))?;
        let z = tape.relu(z);
        let z = tape.matmul(z, bound.var(self.w2))?;
        let z = tape.add(z, bound.var(self.b2))?;
        tape.add(x, z)
    }

    /// Row-wise application without a tape.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.set.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.apply_on_tape(&mut tape, &bound, xv)?;
        Ok(tape.value(y).clone())
    }
}
