//! Dense `f64` matrices with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records operations whose operands are tracked; constants pass
//! straight through. Every loss in the crate is built from these operations
//! and differentiated with [`Tape::backward`].

mod check;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_report, GradCheckReport};
pub use optim::Adam;
pub use params::{glorot, Gradients, ParamSet};
pub use tape::{Axis, BinaryOp, PairMlpWeights, PairMode, Reduction, Tape, UnaryOp, CLAMP_MIN, LEAKY_SLOPE};
pub use tensor::Tensor;

/// Untracked matrix product, for evaluation code that never differentiates.
pub fn matmul(a: &Tensor, b: &Tensor) -> crate::Result<Tensor> {
    Tape::new().matmul(a, b)
}
