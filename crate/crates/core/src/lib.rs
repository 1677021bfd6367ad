//! Bi-fidelity Gaussian process classification with batch active learning.
//!
//! The crate is organized bottom-up:
//!
//! * [`num_core`]: kernels, probit link, Gauss-Hermite quadrature, stabilized
//!   Cholesky and Gaussian mutual information.
//! * [`bfgpc`]: the autoregressive two-fidelity variational GP classifier.
//! * [`acquisition`]: BPMI/LFMI/max-uncertainty/random batch construction.
//! * [`oracles`]: synthetic probability fields and the file exchange protocol
//!   for external simulators.
//! * [`harness`]: the active-learning experiment loop and metrics.
//! * [`cli`]: the `bpmi` command-line tool.

pub mod acquisition;
pub mod bfgpc;
pub mod cli;
pub mod domain;
pub mod error;
pub mod harness;
pub mod num_core;
pub mod oracles;
pub mod rng;

pub use domain::{Domain, Fidelity};
pub use error::{Error, Result};
