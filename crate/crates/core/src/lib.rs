//! Pool-based, batch-incremental active learning.
//!
//! Dual active sampling trains two classifiers of identical structure on the
//! same labeled set and queries the unlabeled samples on which their outputs
//! disagree the most. Random sampling and k-center greedy core-set selection
//! are provided as baselines, together with a small neural network trained
//! by Adam and an experiment engine that writes reproducible CSV logs.

pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod strategies;

pub use error::{Error, Result};
