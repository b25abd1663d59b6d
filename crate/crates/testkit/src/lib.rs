//! Independent oracles shared by the property tests and the acceptance run.
//! Nothing here reuses solver internals beyond the public data types.

pub mod gradcheck;
pub mod lib_docs;
pub mod oracle;
pub mod rollouts;

use metasage_core::domain::Task;
use metasage_core::policy::{ModelConfig, PolicyParams};
use metasage_core::rng::rng_from;

/// A small randomly initialized policy.
pub fn tiny_policy(task: Task, seed: u64) -> PolicyParams {
    let cfg = ModelConfig {
        embed_dim: 16,
        heads: 4,
        layers: 1,
        ff_dim: 32,
        ..ModelConfig::new(task)
    };
    PolicyParams::new(cfg, &mut rng_from(seed)).expect("valid tiny model")
}
