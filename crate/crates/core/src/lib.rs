//! Differentiable non-convex inner-loop optimization by Gaussian adaptive
//! stochastic search, together with the small neural-network stack and the
//! experiments built on it.

pub mod error;
pub mod fbsde;
pub mod harness;
pub mod nn;
pub mod novas;
pub mod problems;
pub mod rng;
pub mod spen;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
