//! Minimal NCHW layer kernels with explicit backward passes.

mod conv;
mod linear;
mod norm;
mod param;

pub use conv::{conv2d, conv2d_backward, conv_output_size};
pub use linear::{global_avg_pool, global_avg_pool_backward, Linear};
pub use norm::{BatchNorm, BnCache, BN_EPS, BN_MOMENTUM};
pub use param::Param;

use ndarray::Array4;

use crate::scalar::Scalar;

/// Forward mode: `Train` uses batch statistics and records caches for the
/// backward pass; `Eval` uses running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu<F: Scalar>(x: &mut Array4<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Zeroes `grad` wherever the activation it flows back through was clipped.
pub fn relu_backward<F: Scalar>(grad: &mut Array4<F>, activated: &Array4<F>) {
    ndarray::Zip::from(grad).and(activated).for_each(|g, &a| {
        if a <= F::zero() {
            *g = F::zero();
        }
    });
}
