//! Dense tensors, a reverse-mode autodiff tape, and the Adam optimizer.

mod adam;
mod error;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::NumError;
pub use params::{BoundParams, ParamId, ParamStore};
pub use tape::{sigmoid, AttentionLayout, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod gradcheck;
#[cfg(test)]
mod op_tests;
