//! Link-level simulation of a massive MU-MIMO downlink with non-linear power
//! amplifiers.
//!
//! The crate provides the building blocks of a two-stage "autoprecoder"
//! transmitter (a learned per-user symbol mapper followed by zero-forcing or
//! matrix-polynomial precoding), the classical reference chains, a
//! Monte-Carlo symbol-error-rate harness, and a real-multiplication cost model.

pub mod autodiff;
pub mod autoprecoder;
pub mod baselines;
pub mod channel;
pub mod complexity;
pub mod config;
pub mod container;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod nn;
pub mod pa;
pub mod precoding;
pub mod rng;

pub use error::{Error, Result};
