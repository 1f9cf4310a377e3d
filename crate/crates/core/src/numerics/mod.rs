//! Dense tensors, reverse-mode autodiff and the Adam optimizer.

mod graph;
mod kernels;
mod param;
mod tensor;

pub use graph::{Gradients, Graph, NodeId, Var};
pub use kernels::{conv_out_len, pixel_shuffle, pixel_unshuffle};
pub use param::{adam_step, Adam, AdamState, Bound, ParamId, ParamStore, Parameter};
pub use tensor::{Real, Tensor};

/// Same-style padding for an odd `k x k` kernel.
pub fn same_padding(k: usize) -> usize {
    k / 2
}
