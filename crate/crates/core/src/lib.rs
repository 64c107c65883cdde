//! Continuous-time policy optimization for controlled diffusions.
//!
//! Environments are SDEs discretized by Euler–Maruyama; policies are
//! Gaussian-linear or Beta-MLP feedback laws; training uses exponential
//! rollout times to sample the discounted occupation measure.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod critic;
pub mod error;
pub mod harness;
pub mod lq;
pub mod nn;
pub mod occupation;
pub mod policy;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
