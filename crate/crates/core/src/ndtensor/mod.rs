//! Dense n-dimensional arrays with reverse-mode differentiation.
//!
//! [`Tensor`] is a plain row-major `f64` buffer plus a shape. [`Graph`]
//! records one forward pass as a tape of operations; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into every leaf
//! that asked for them. [`grad_check`] compares analytic gradients with
//! central finite differences and is used throughout the test suites.
//!
//! Everything runs in double precision on the CPU.

mod gradcheck;
mod graph;
mod init;
mod param;
mod tensor;

#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, grad_check_subset};
pub use graph::{Activation, BatchNormStats, Graph, NodeId, NormMode, Padding};
pub use init::{orthogonal_init, truncated_normal, xavier_uniform};
pub use param::{decays, ParamGroup, Parameter};
pub use tensor::{Tensor, TensorError};

pub(crate) use graph::logsumexp_slice;

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => input.div_ceil(stride),
        Padding::Valid => (input - kernel) / stride + 1,
    }
}

/// Output spatial extent of a max-pool along one axis.
pub fn pool_out_dim(input: usize, pool: usize) -> usize {
    input / pool
}
