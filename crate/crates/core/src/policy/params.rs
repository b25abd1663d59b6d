use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Tensor};
use crate::domain::Task;
use crate::error::{Error, Result};

/// Architecture hyperparameters of the encoder–decoder policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    /// Logit clipping constant `C` in `C·tanh(·)`.
    pub clip_c: f64,
}

impl ModelConfig {
    pub fn new(task: Task) -> Self {
        ModelConfig {
            task,
            embed_dim: 128,
            heads: 8,
            layers: 3,
            ff_dim: 512,
            clip_c: 10.0,
        }
    }

    pub fn key_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !(self.clip_c > 0.0) {
            return Err(Error::Config(format!("clip_c must be positive, got {}", self.clip_c)));
        }
        if self.ff_dim == 0 {
            return Err(Error::Config("ff_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Width of the per-node input features for a task.
pub fn feature_dim(task: Task) -> usize {
    match task {
        Task::Tsp => 2,
        Task::Cvrp | Task::Op => 4,
        Task::Pctsp => 5,
    }
}

/// Width of the dynamic state features added to the decoder query.
pub fn state_dim(task: Task) -> usize {
    match task {
        Task::Tsp => 0,
        _ => 1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub norm1_g: ParamId,
    pub norm1_b: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub norm2_g: ParamId,
    pub norm2_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct PolicyIds {
    pub in_w: ParamId,
    pub in_b: ParamId,
    pub layers: Vec<LayerIds>,
    pub dec_k: ParamId,
    pub dec_v: ParamId,
    pub dec_o: ParamId,
    pub dec_state: Option<ParamId>,
}

/// Learnable tensors of the base policy (encoder and decoder).
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    cfg: ModelConfig,
    set: ParamSet,
    pub(crate) ids: PolicyIds,
}

fn layout(cfg: &ModelConfig, set: &mut ParamSet, rng: &mut impl Rng) -> PolicyIds {
    let d = cfg.embed_dim;
    let f = feature_dim(cfg.task);
    let in_w = set.push_uniform("enc.in.w", &[f, d], f, rng);
    let in_b = set.push_uniform("enc.in.b", &[1, d], f, rng);
    let layers = (0..cfg.layers)
        .map(|l| {
            let p = |s: &str| format!("enc.{l}.{s}");
            LayerIds {
                wq: set.push_uniform(p("wq"), &[d, d], d, rng),
                wk: set.push_uniform(p("wk"), &[d, d], d, rng),
                wv: set.push_uniform(p("wv"), &[d, d], d, rng),
                wo: set.push_uniform(p("wo"), &[d, d], d, rng),
                norm1_g: set.push(p("norm1.g"), Tensor::full(&[1, d], 1.0)),
                norm1_b: set.push(p("norm1.b"), Tensor::zeros(&[1, d])),
                ff1_w: set.push_uniform(p("ff1.w"), &[d, cfg.ff_dim], d, rng),
                ff1_b: set.push_uniform(p("ff1.b"), &[1, cfg.ff_dim], d, rng),
                ff2_w: set.push_uniform(p("ff2.w"), &[cfg.ff_dim, d], cfg.ff_dim, rng),
                ff2_b: set.push_uniform(p("ff2.b"), &[1, d], cfg.ff_dim, rng),
                norm2_g: set.push(p("norm2.g"), Tensor::full(&[1, d], 1.0)),
                norm2_b: set.push(p("norm2.b"), Tensor::zeros(&[1, d])),
            }
        })
        .collect();
    let dec_k = set.push_uniform("dec.k", &[d, d], d, rng);
    let dec_v = set.push_uniform("dec.v", &[d, d], d, rng);
    let dec_o = set.push_uniform("dec.o", &[d, d], d, rng);
    let s = state_dim(cfg.task);
    let dec_state = (s > 0).then(|| set.push_uniform("dec.state", &[s, d], s, rng));
    PolicyIds {
        in_w,
        in_b,
        layers,
        dec_k,
        dec_v,
        dec_o,
        dec_state,
    }
}

impl PolicyParams {
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut set = ParamSet::new();
        let ids = layout(&cfg, &mut set, rng);
        Ok(PolicyParams { cfg, set, ids })
    }

    /// Wrap loaded tensors, checking names and shapes against `cfg`.
    pub fn from_param_set(cfg: ModelConfig, set: ParamSet) -> Result<Self> {
        cfg.validate()?;
        let mut reference = ParamSet::new();
        let ids = layout(&cfg, &mut reference, &mut crate::rng::rng_from(0));
        reference.check_layout(&set)?;
        Ok(PolicyParams { cfg, set, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.set
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    /// Tensors read by the decoder only (the rest feed the encoder).
    pub fn decoder_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.ids.dec_k, self.ids.dec_v, self.ids.dec_o];
        ids.extend(self.ids.dec_state);
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_consistent() {
        let cfg = ModelConfig {
            embed_dim: 16,
            heads: 4,
            layers: 2,
            ff_dim: 32,
            ..ModelConfig::new(Task::Cvrp)
        };
        let p = PolicyParams::new(cfg.clone(), &mut crate::rng::rng_from(1)).unwrap();
        assert_eq!(p.params().by_name("enc.in.w").unwrap().shape(), &[4, 16]);
        assert_eq!(p.params().by_name("dec.state").unwrap().shape(), &[1, 16]);
        let q = PolicyParams::from_param_set(cfg.clone(), p.params().clone()).unwrap();
        assert_eq!(p, q);
        let wrong = ModelConfig { layers: 3, ..cfg };
        assert!(PolicyParams::from_param_set(wrong, p.params().clone()).is_err());
    }

    #[test]
    fn rejects_bad_dimensions() {
        let cfg = ModelConfig {
            embed_dim: 10,
            heads: 3,
            ..ModelConfig::new(Task::Tsp)
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            clip_c: 0.0,
            ..ModelConfig::new(Task::Tsp)
        };
        assert!(cfg.validate().is_err());
    }
}
