//! Minimal dense tensors with reverse-mode automatic differentiation.

mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use graph::{Gradients, Graph, NodeId, LAYER_NORM_EPS};
pub use params::{Param, ParamId, ParamSet};
pub use tensor::Tensor;

