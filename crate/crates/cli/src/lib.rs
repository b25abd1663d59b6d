//! Command-line pipeline: instance generation, pretraining, distillation,
//! scale-learner training, adaptation, evaluation and gap reports.

pub mod commands;
pub mod config;

pub use commands::execute;
pub use config::RunConfig;
