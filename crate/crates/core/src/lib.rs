//! Automated feature-transformation search.
//!
//! The pipeline collects (program, score) records with cascading
//! reinforcement-learning agents, embeds postfix-encoded programs with an
//! encoder–evaluator–decoder model, moves the embeddings of the best
//! programs uphill along the evaluator's gradient, and beam-decodes them
//! back into programs that are scored on the dataset.

pub mod collector;
pub mod data;
pub mod downstream;
pub mod error;
pub mod expr;
pub mod opset;
pub mod pipeline;
pub mod record;
pub mod search;
pub mod seqmodel;
pub mod synthetic;

pub use error::{Error, Result};
