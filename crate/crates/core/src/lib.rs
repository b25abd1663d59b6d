//! Constructive attention policies for routing problems, test-time
//! adaptation with locality-biased exploration and scheduled temperature,
//! and a scale meta-learner that conditions node embeddings on problem size.

pub mod adapt;
pub mod autodiff;
pub mod domain;
pub mod eval;
pub mod error;
pub mod io;
pub mod policy;
pub mod rng;
pub mod sml;
pub mod train;

pub use error::{Error, Result};
