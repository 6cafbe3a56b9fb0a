//! Tensors, the differentiation tape and the optimizer.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{Grads, ParamId, ParamStore};
pub use tape::{logsumexp, sigmoid, softmax_in_place, Tape, Var};
pub use tensor::Tensor;

