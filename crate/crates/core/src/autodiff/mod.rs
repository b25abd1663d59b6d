//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use params::{grads_finite, scale_grads, sum_grads, Bound, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var, MASK_SENTINEL};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use tape::{log_softmax_row, softmax_row};
