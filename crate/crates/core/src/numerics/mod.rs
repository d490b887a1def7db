//! Arrays, random streams, reverse-mode differentiation and AdamW.

pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use optim::{adamw_step, OptimizerConfig, OptimizerState, StepInfo};
pub use rng::{rng_normal, RngStream, StreamLabel};
pub use tape::{grad, Gradients, Precision, Tape, Var};
pub use tensor::Tensor;
