//! Residual diffusion bridge policies.
//!
//! A trajectory `x` is split along time into a low-frequency part `x_S` (the
//! lowest `k` DCT modes) and a high-frequency residual `x_E`. An anchor
//! network regresses `x_S` from the condition; a flow-matching velocity field
//! then transports samples from a narrow Gaussian around that anchor to the
//! full trajectory along straight paths.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: tensors, random streams, tape autodiff, AdamW.
//! - [`spectral`]: DCT and the semantic/execution decomposition.
//! - [`synth`]: synthetic reach tasks and success metrics.
//! - [`models`]: anchor and velocity MLPs.
//! - [`bridge`]: source construction, loss, Euler sampling.
//! - [`train`]: the training loop and validation.
//! - [`diagnostics`]: experiments that check the bridge's claimed properties.
//! - [`formats`], [`config`], [`cli`]: files, run configuration, command line.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod formats;
pub mod models;
pub mod numerics;
pub mod spectral;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Written into every output file's provenance.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
