//! Scale meta-learner: scale-conditioned embeddings and their training by
//! distillation from adapted embeddings plus a zero-shot objective.

mod distill;
mod params;
mod train;

pub use distill::{
    build_distill_set, distill_instance_seed, load_distill_set, save_distill_set, DistillManifest, DistillRecord,
    ManifestEntry, MANIFEST_FILE,
};
pub use params::{apply_sml, scale_feature, SmlParams};
pub use train::{distil_loss, j_distil, j_zero, sml_log_csv, train_sml, SmlLogRow, SmlTrainConfig, ZeroShotConfig};
