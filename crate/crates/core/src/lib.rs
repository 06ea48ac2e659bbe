//! Descriptor distillation for local image patches.
//!
//! A teacher network is trained with a triplet loss and hardest-in-batch
//! negative mining; a student is then trained against the frozen teacher
//! with the triplet loss plus two regularizers that tie the student's
//! positive and negative pair distances to the teacher's.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`graph`], [`gradcheck`]: dense tensors and a tape-based
//!   reverse-mode autodiff covering convolution, batch norm, ReLU, row
//!   normalization, reductions and pairwise distances.
//! - [`model`]: architecture tables, forward pass and `DDCK` checkpoints.
//! - [`loss`]: distances, mining and the loss terms.
//! - [`theory`]: the per-triplet optimum in distance space.
//! - [`data`], [`optim`], [`train`], [`eval`], [`metrics`]: the pipeline.

mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
mod parallel;
pub mod tensor;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use graph::{BnMode, Graph, Parameter, Reduction, RunningStats, Var};
pub use parallel::configure_threads;
pub use tensor::Tensor;
