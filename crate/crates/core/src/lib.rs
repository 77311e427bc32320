//! Transport-map Bayesian inversion with iterative model-error correction.

pub mod algorithms;
pub mod bias_demo;
pub mod config;
pub mod error;
pub mod models;
pub mod oracles;
pub mod losses;
pub mod prob;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod runner;
pub mod solver;
pub mod transport;

pub use error::{Error, Result};
