//! Dense `f64` tensors, a reverse-mode tape, Adam, and finite-difference
//! gradient checking.

mod gradcheck;
mod graph;
mod math;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId, ParamId, ParamStore};
pub use math::{argmax, entropy, normalized_entropy, softmax};
pub use optim::{AdamConfig, AdamState};
pub use tensor::Tensor;

pub(crate) use graph::softmax_in_place;
pub(crate) use math::entropy_unchecked;
