//! Multiproposal Markov chain Monte Carlo kernels, chains and diagnostics.

pub mod adaptation;
pub mod chain;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod limits;
pub mod math;
pub mod proposals;
pub mod rng;
pub mod targets;

pub use error::{Error, Result};
