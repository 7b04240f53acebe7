//! Dense tensor arithmetic with tape-based reverse-mode differentiation,
//! a counter-based RNG, and multiply-accumulate instrumentation.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod macs;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{count_macs, Gradients, Graph, Var};
pub use kernels::InterpMode;
pub use macs::{MacCounter, OpKind};
pub use rng::{Rng, RngState};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
