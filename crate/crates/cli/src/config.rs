//! Run configuration: defaults, then a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use metasage_core::adapt::{default_as_lr, default_delta, AdaptMode, SageConfig};
use metasage_core::domain::Task;
use metasage_core::policy::ModelConfig;
use metasage_core::sml::{SmlTrainConfig, ZeroShotConfig};
use metasage_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand that produced this snapshot.
    pub command: String,
    pub task: Task,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub inputs: Inputs,
    pub gen: GenSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub distill: DistillSection,
    pub sml: SmlSection,
    pub adapt: AdaptSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            task: Task::Tsp,
            seed: 0,
            out: PathBuf::from("runs/latest"),
            workers: 0,
            inputs: Inputs::default(),
            gen: GenSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            distill: DistillSection::default(),
            sml: SmlSection::default(),
            adapt: AdaptSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Upstream artifacts and instance sources.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Directory holding `policy.ckpt` and `model.json`.
    pub policy: Option<PathBuf>,
    /// Directory holding `sml.ckpt`. SAGE runs apply the scale learner
    /// whenever this is set.
    pub sml: Option<PathBuf>,
    /// Distillation record directory.
    pub records: Option<PathBuf>,
    /// Directory of instance files; when absent, instances are generated
    /// exactly as `gen` would from `[gen]` and the run seed.
    pub instances: Option<PathBuf>,
    /// Result CSVs combined by `report`.
    pub runs: Vec<PathBuf>,
    /// Baseline result CSV for `report`.
    pub baseline: Option<PathBuf>,
    /// Keep only this method's rows of the baseline file.
    pub baseline_method: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub n: usize,
    pub count: usize,
    /// `native` (JSON) or `lib` (TSPLIB/CVRPLIB text).
    pub format: String,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection {
            n: 20,
            count: 100,
            format: "native".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub clip_c: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(Task::Tsp);
        ModelSection {
            embed_dim: m.embed_dim,
            heads: m.heads,
            layers: m.layers,
            ff_dim: m.ff_dim,
            clip_c: m.clip_c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub n_train: usize,
    pub batch_instances: usize,
    pub multistart: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(Task::Tsp);
        TrainSection {
            n_train: t.n_train,
            batch_instances: t.batch_instances,
            multistart: t.multistart,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            learning_rate: t.learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub scales: Vec<usize>,
    pub per_scale: usize,
    pub iterations: usize,
    pub multistart: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection {
            scales: vec![30, 40, 50],
            per_scale: 64,
            iterations: 50,
            multistart: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmlSection {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub multistart: usize,
    pub lambda: f64,
}

impl Default for SmlSection {
    fn default() -> Self {
        let s = SmlTrainConfig::default();
        SmlSection {
            beta: s.beta,
            learning_rate: s.learning_rate,
            epochs: s.epochs,
            batch_size: s.batch_size,
            hidden: s.hidden,
            multistart: s.zero_shot.multistart,
            lambda: s.zero_shot.lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSection {
    pub mode: AdaptMode,
    /// Task default when absent (200 for TSP/CVRP, 100 otherwise).
    pub iterations: Option<usize>,
    pub multistart: usize,
    pub augmentations: usize,
    pub lambda: f64,
    /// Task and mode default when absent.
    pub delta: Option<f64>,
    pub alpha0: f64,
    pub alpha_k: f64,
    pub temp0: f64,
    pub temp_k: f64,
    pub hidden: usize,
    pub imitate_global_best: bool,
}

impl Default for AdaptSection {
    fn default() -> Self {
        let s = SageConfig::new(Task::Tsp, AdaptMode::Sage);
        AdaptSection {
            mode: AdaptMode::Sage,
            iterations: None,
            multistart: s.multistart,
            augmentations: s.augmentations,
            lambda: s.lambda,
            delta: None,
            alpha0: s.alpha0,
            alpha_k: s.alpha_k,
            temp0: s.temp0,
            temp_k: s.temp_k,
            hidden: s.adapter_hidden,
            imitate_global_best: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Greedy starts per view; 0 means one per node.
    pub multistart: usize,
    pub augmentations: usize,
    /// `nn`, `two-opt` or `exact`.
    pub baseline: String,
    /// Fill the `seconds` column. Off by default so result files are
    /// byte-reproducible.
    pub record_time: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            multistart: 0,
            augmentations: 1,
            baseline: "two-opt".into(),
            record_time: false,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the TOML file at `path`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fill task-dependent defaults so the snapshot is complete.
    pub fn resolve(&mut self) {
        let task = self.task;
        let mode = self.adapt.mode;
        self.adapt.iterations.get_or_insert(SageConfig::new(task, mode).iterations);
        self.adapt.delta.get_or_insert(match mode {
            AdaptMode::As => default_as_lr(task),
            _ => default_delta(task),
        });
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            task: self.task,
            embed_dim: self.model.embed_dim,
            heads: self.model.heads,
            layers: self.model.layers,
            ff_dim: self.model.ff_dim,
            clip_c: self.model.clip_c,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            task: self.task,
            n_train: t.n_train,
            batch_instances: t.batch_instances,
            multistart: t.multistart,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            learning_rate: t.learning_rate,
            seed: self.seed,
            model: self.model_config(),
        }
    }

    pub fn sage_config(&self) -> SageConfig {
        let a = &self.adapt;
        let base = SageConfig::new(self.task, a.mode);
        SageConfig {
            mode: a.mode,
            iterations: a.iterations.unwrap_or(base.iterations),
            multistart: a.multistart,
            augmentations: a.augmentations,
            lambda: a.lambda,
            delta: a.delta.unwrap_or(base.delta),
            alpha0: a.alpha0,
            alpha_k: a.alpha_k,
            temp0: a.temp0,
            temp_k: a.temp_k,
            adapter_hidden: a.hidden,
            imitate_global_best: a.imitate_global_best,
        }
    }

    /// SAGE settings used to build distillation targets.
    pub fn distill_sage_config(&self) -> SageConfig {
        SageConfig {
            mode: AdaptMode::Sage,
            iterations: self.distill.iterations,
            multistart: self.distill.multistart,
            augmentations: 1,
            ..self.sage_config()
        }
    }

    pub fn sml_config(&self) -> SmlTrainConfig {
        let s = &self.sml;
        SmlTrainConfig {
            beta: s.beta,
            learning_rate: s.learning_rate,
            epochs: s.epochs,
            batch_size: s.batch_size,
            hidden: s.hidden,
            zero_shot: ZeroShotConfig {
                multistart: s.multistart,
                lambda: s.lambda,
            },
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_roundtrip() {
        let mut cfg = RunConfig {
            command: "adapt".into(),
            task: Task::Cvrp,
            ..RunConfig::default()
        };
        cfg.resolve();
        assert_eq!(cfg.adapt.delta, Some(4.1e-3));
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("task = \"op\"\n[adapt]\nmode = \"eas\"\n").unwrap();
        assert_eq!(cfg.task, Task::Op);
        assert_eq!(cfg.adapt.mode, AdaptMode::Eas);
        assert_eq!(cfg.train, TrainSection::default());
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }
}
