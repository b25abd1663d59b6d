use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{sage, SageConfig};
use crate::autodiff::{checkpoint, ParamSet, Tensor};
use crate::domain::{generate, Instance, Task};
use crate::error::{Error, Result};
use crate::policy::{encode, PolicyParams};
use crate::rng::derive_path;

/// Source embeddings of one instance and the adapted embeddings SML should
/// reproduce.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillRecord {
    pub id: String,
    pub task: Task,
    /// Node count `N` of the instance.
    pub scale: usize,
    /// Generator seed; `generate(task, scale, seed)` rebuilds the instance.
    pub seed: u64,
    pub source: Tensor,
    pub target: Tensor,
}

impl DistillRecord {
    pub fn instance(&self) -> Result<Instance> {
        generate(self.task, self.scale, self.seed)
    }
}

/// Seed of the `l`-th distillation instance at scale `n`.
pub fn distill_instance_seed(seed: u64, n: usize, l: usize) -> u64 {
    derive_path(seed, &[n as u64, l as u64])
}

/// Run SAGE without the scale learner on `per_scale` fresh instances per
/// scale and keep `(h, g_η(h))` pairs.
pub fn build_distill_set(
    policy: &PolicyParams,
    scales: &[usize],
    per_scale: usize,
    sage_cfg: &SageConfig,
    seed: u64,
) -> Result<Vec<DistillRecord>> {
    let task = policy.config().task;
    let jobs: Vec<(usize, usize)> = scales
        .iter()
        .flat_map(|&n| (0..per_scale).map(move |l| (n, l)))
        .collect();
    jobs.par_iter()
        .map(|&(n, l)| {
            let id = format!("n{n}-{l}");
            let inst_seed = distill_instance_seed(seed, n, l);
            let run = || -> Result<DistillRecord> {
                let inst = generate(task, n, inst_seed)?;
                let h = encode(policy, &inst)?.h;
                let out = sage(&inst, sage_cfg, policy, None, derive_path(inst_seed, &[1]))?;
                let target = out.adapter.expect("SAGE always returns an adapter").apply(&h)?;
                Ok(DistillRecord {
                    id: id.clone(),
                    task,
                    scale: n,
                    seed: inst_seed,
                    source: h,
                    target,
                })
            };
            run().map_err(|e| e.for_instance(id.clone()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub scale: usize,
    pub seed: u64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillManifest {
    pub task: Task,
    pub iterations: usize,
    pub scales: Vec<usize>,
    pub records: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn scale_file(n: usize) -> String {
    format!("distill_n{n}.bin")
}

/// One tensor file per scale (`<id>.h`, `<id>.t` entries) plus a manifest.
pub fn save_distill_set(dir: &Path, records: &[DistillRecord], iterations: usize) -> Result<()> {
    let Some(first) = records.first() else {
        return Err(Error::Argument("no distillation records to save".into()));
    };
    fs::create_dir_all(dir)?;
    let mut scales: Vec<usize> = records.iter().map(|r| r.scale).collect();
    scales.sort_unstable();
    scales.dedup();
    let mut entries = Vec::with_capacity(records.len());
    for &n in &scales {
        let mut set = ParamSet::new();
        for r in records.iter().filter(|r| r.scale == n) {
            set.push(format!("{}.h", r.id), r.source.clone());
            set.push(format!("{}.t", r.id), r.target.clone());
            entries.push(ManifestEntry {
                id: r.id.clone(),
                scale: n,
                seed: r.seed,
                file: scale_file(n),
            });
        }
        checkpoint::save(dir.join(scale_file(n)), &set)?;
    }
    let manifest = DistillManifest {
        task: first.task,
        iterations,
        scales,
        records: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_distill_set(dir: &Path) -> Result<(DistillManifest, Vec<DistillRecord>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read distillation manifest {}: {e}", path.display())))?;
    let manifest: DistillManifest = serde_json::from_str(&text)?;
    let mut files = std::collections::BTreeMap::new();
    let mut out = Vec::with_capacity(manifest.records.len());
    for e in &manifest.records {
        if !files.contains_key(&e.file) {
            files.insert(e.file.clone(), checkpoint::load(dir.join(&e.file))?);
        }
        let set = &files[&e.file];
        let get = |suffix: &str| {
            set.by_name(&format!("{}.{suffix}", e.id))
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("record {} missing from {}", e.id, e.file)))
        };
        let (source, target) = (get("h")?, get("t")?);
        if source.shape() != target.shape() || source.rows() != e.scale {
            return Err(Error::Checkpoint(format!("record {} has inconsistent shapes", e.id)));
        }
        out.push(DistillRecord {
            id: e.id.clone(),
            task: manifest.task,
            scale: e.scale,
            seed: e.seed,
            source,
            target,
        });
    }
    Ok((manifest, out))
}
