//! Soft-prompt tuning of a frozen decoder-only transformer for dialogue
//! summarization, with the evaluation and experiment tooling around it.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod generation;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod params;
pub mod prompt;
pub mod synthetic;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
