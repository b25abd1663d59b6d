//! Attention encoder–decoder policy: node embeddings, masked decoding with
//! temperature and locality bias, multistart rollouts and augmentation.

mod adapter;
mod augment;
mod decoder;
mod encoder;
mod params;
mod rollout;

pub use adapter::EtaAdapter;
pub use augment::{augment, NUM_AUGMENTATIONS};
pub use decoder::{decode_step, state_feature, DecoderCache, StepRecord};
pub use encoder::{encode, encode_on_tape, node_features, Embeddings};
pub use params::{feature_dim, state_dim, ModelConfig, PolicyParams};
pub use rollout::{
    best_trajectory, choose_starts, policy_gradient_weights, records_for, rollout, sample_view, sample_with_cache, DecodeTrace, DecodeConfig, DecodeMode, Trajectory,
    weighted_trajectory_log_likelihood,
};
