//! Unrolled Expectation-Maximization and Highway-EM attention for isotropic
//! Gaussian mixtures, with hand-written backpropagation and the tooling to
//! measure forward convergence and backward gradient flow.
//!
//! Layout:
//! - [`numerics`]: dense matrices and stable reductions
//! - [`gmm`]: E/M/N/R steps, ELBO, log-likelihood
//! - [`stack`]: the unrolled network and its running initial bases
//! - [`backprop`]: vector-Jacobian products and the finite-difference oracle
//! - [`model`]: a small trainable backbone → HEM → head model
//! - [`datagen`]: synthetic point clouds, toy segmentation images, file format
//! - [`diagnostics`]: per-layer gradient statistics and CSV/JSON emission

pub mod backprop;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod gmm;
pub mod model;
pub mod numerics;
pub mod stack;

pub use error::{Error, Result};
pub use numerics::Matrix;
