//! Catastrophic forgetting in grounded question answering, at desk scale.
//!
//! The crate generates symbolic scenes with two question tasks (attribute
//! queries and attribute comparisons), trains a recurrent-encoder /
//! spatial-attention classifier on them with a small reverse-mode
//! differentiation engine, and runs the sequential-training regimes
//! (naive fine-tuning, cumulative training, elastic weight consolidation and
//! rehearsal) together with the evaluation and representation analysis used
//! to compare them.

pub mod analysis;
pub mod diff;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod strategies;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
