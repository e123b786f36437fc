//! Differentiable layer primitives with hand-derived backward passes.
//!
//! Every function here is a pure function of its arguments.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{relu, relu_backward, softmax_t, softmax_t_backward};
pub(crate) use activation::softmax_slice;
pub use conv::{conv2d_backward, conv2d_forward, conv2d_forward_naive, output_extent};
pub use dense::{dense_backward, dense_forward};
pub use pool::{
    avgpool2d, avgpool2d_backward, global_avgpool, global_avgpool_backward, maxpool2d,
    maxpool2d_backward, PoolIndices,
};

use crate::tensor::Tensor;

/// Gradients produced by a parametric layer's backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight_grad: Tensor,
    pub bias_grad: Tensor,
    pub input_grad: Tensor,
}
