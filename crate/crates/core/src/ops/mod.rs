//! Forward and backward kernels the network is assembled from.
//!
//! All kernels are pure functions over value-semantic tensors and are
//! deterministic: identical inputs give bit-identical outputs.

mod activation;
mod batchnorm;
mod conv;
mod pool;

pub use activation::{relu, relu_backward, softmax_backward, softmax_channels};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormGrads, Mode, RunningStats, BN_EPS,
    BN_MOMENTUM,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, KERNEL};
pub use pool::{maxpool2x2, maxpool2x2_backward, pooled_extent, unpool2x2, unpool2x2_backward, PoolIndices};
