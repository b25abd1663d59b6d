use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::Rng;

/// Ordered collection of named tensors, the unit of checkpointing and
/// optimization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn push_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
        self.push(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Place every tensor on the tape, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let all: Vec<ParamId> = (0..self.len()).map(ParamId).collect();
        self.bind_ids(tape, &all, trainable)
    }

    /// Place only the listed tensors on the tape.
    pub fn bind_ids(&self, tape: &mut Tape, ids: &[ParamId], trainable: bool) -> Bound {
        let mut vars = vec![None; self.len()];
        for &id in ids {
            let t = self.tensors[id.0].clone();
            vars[id.0] = Some(if trainable { tape.param(t) } else { tape.constant(t) });
        }
        Bound { vars }
    }

    /// Checksum used to assert that frozen parameters are left untouched.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in self.iter() {
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x1000_0000_01b3);
            }
            for v in t.data() {
                h = (h ^ v.to_bits()).wrapping_mul(0x1000_0000_01b3);
            }
        }
        h
    }

    /// Replace values with those of another set that has the same layout.
    pub fn assign(&mut self, other: &ParamSet) -> Result<()> {
        self.check_layout(other)?;
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config("parameter names differ".into()));
        }
        for ((n, a), b) in self.names.iter().zip(&self.tensors).zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "parameter {n}: shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Tape handles for the tensors of a [`ParamSet`] that were bound.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    /// Handle of a bound tensor. Panics if `id` was not bound, which is a
    /// programming error in the caller.
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].unwrap_or_else(|| panic!("parameter {} not bound", id.0))
    }

    /// Gradients for every tensor of the set (zeros where unbound or
    /// unreachable).
    pub fn grads(&self, g: &Gradients, set: &ParamSet) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(set.tensors())
            .map(|(v, t)| match v.and_then(|v| g.get(v)) {
                Some(g) => g.clone(),
                None => Tensor::zeros(t.shape()),
            })
            .collect()
    }
}

/// Elementwise sum of gradient lists; used to reduce per-instance gradients.
pub fn sum_grads(acc: &mut Vec<Tensor>, other: &[Tensor]) {
    if acc.is_empty() {
        acc.extend(other.iter().cloned());
        return;
    }
    for (a, b) in acc.iter_mut().zip(other) {
        a.add_assign(b);
    }
}

pub fn scale_grads(grads: &mut [Tensor], k: f64) {
    for g in grads {
        g.data_mut().iter_mut().for_each(|x| *x *= k);
    }
}

pub fn grads_finite(grads: &[Tensor]) -> bool {
    grads.iter().all(Tensor::is_finite)
}
