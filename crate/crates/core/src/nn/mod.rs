//! Minimal CPU neural-network toolkit.
//!
//! Layers are plain structs holding offsets into a flat [`ParamStore`];
//! forward passes return explicit caches and backward passes accumulate
//! into a gradient buffer of the same length as the parameter array. There
//! is no tape or autograd: each network wires its own backward pass.

mod adam;
mod conv;
mod gemm;
mod layers;
mod norm;
mod param;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;
pub use gemm::gemm;
pub use layers::{
    adaptive_avg_pool, adaptive_avg_pool_backward, add_residual, add_residual_backward, avg_pool2,
    avg_pool2_backward, concat_channels, relu_backward, relu_inplace, sigmoid, split_channels,
    upsample2, upsample2_backward, ConvBnRelu, ConvBnReluCache, Linear,
};
pub use norm::{BatchNorm2d, BnCache, BN_EPS, BN_MOMENTUM};
pub use param::{ParamRef, ParamSlice, ParamStore};
pub use tensor::Tensor;
