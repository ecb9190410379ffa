//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records one forward computation built from the operations
//! the network builders need (affine maps, 3×3 convolutions, relu, pooling,
//! embeddings, single-head attention and the distillation loss). Calling
//! [`Tape::backward`] on the scalar loss yields a fresh [`Gradients`] set
//! keyed by parameter slot; [`sgd_step`] then applies heavy-ball momentum.
//!
//! The engine is generic over [`Real`] so the same code runs in 32-bit mode
//! for training and 64-bit mode for gradient and oracle checks.

pub mod gradcheck;
mod kernels;
mod optim;
mod tape;
mod tensor;

pub use optim::{sgd_step, OptimizerState, SgdConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Precision, Real, Tensor};

#[cfg(test)]
mod tests;
