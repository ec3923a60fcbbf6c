//! Minimal CPU neural-network kernels with hand-written backward passes.

mod adam;
mod conv;
pub(crate) mod gemm;
mod ops;

pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;
pub use ops::{
    depth_to_space, leaky_relu_backward, leaky_relu_in_place, max_pool2, max_pool2_backward, relu_backward,
    relu_in_place, space_to_depth,
};
