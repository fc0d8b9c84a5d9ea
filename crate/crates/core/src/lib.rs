//! Network Fission: turn a staged backbone into a multi-exit ensemble by
//! partitioning each stage's weights into disjoint groups, then train it with
//! ensemble knowledge distillation.

pub mod data;
pub mod error;
pub mod eval;
pub mod fission;
pub mod model;
pub mod nn;
pub mod pai;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
