//! Embedding-based proxy models for semantic SQL operators.
//!
//! Queries with `AI.IF`, `AI.RANK` and `AI.CLASSIFY` are parsed into a
//! logical plan; each semantic operator is then answered by a logistic
//! regression proxy trained on a small LLM-labeled sample, or by the LLM
//! itself when the proxy fails the quality gate.

pub mod dataset;
pub mod embedding;
pub mod executor;
pub mod error;
pub mod ledger;
pub mod metrics;
pub mod oracle;
pub mod proxy;
pub mod query;
pub mod repro;
pub mod rng;
pub mod sampler;
pub mod selector;
pub mod spec_string;
pub mod synth;

pub use error::{Error, Result};
