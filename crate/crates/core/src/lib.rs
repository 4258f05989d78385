//! Interpretable-by-design classification by Information Pursuit.
//!
//! - [`concept`]: prompts, attribute parsing, embedding dot-product answers.
//! - [`exact`]: exact posteriors, mutual information and greedy pursuit on
//!   discrete task models.
//! - [`engine`]: the variational querier/predictor pair, training and
//!   threshold-stopped inference.
//! - [`filters`]: concept filters and selection-frequency reports.
//! - [`baselines`]: elastic-net linear concept model and the dense classifier.

pub mod baselines;
pub mod concept;
pub mod engine;
pub mod error;
pub mod exact;
pub mod filters;
mod format;
pub mod nn;
pub mod trajectory;

pub use error::{Error, Result};
