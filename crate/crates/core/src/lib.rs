//! Knowledge graph completion with rule-mined neighbor aggregation.
//!
//! The pipeline pretrains translational embeddings, mines path-shaped horn
//! rules, rewrites multi-hop neighbors into one-hop neighbors through the
//! selected rules, aggregates neighborhoods with a two-layer attention
//! encoder, and decodes with a convolutional scorer.

mod error;

pub mod aggregator;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod evaluator;
pub mod kg;
pub mod numerics;
pub mod pipeline;
pub mod rules;
pub mod transe;

pub use error::{Error, Result};
