//! Prompt optimization by multi-agent textual gradients.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithmic piece
//! of the engine: agents that turn minibatch errors into textual gradients,
//! the semantic coordinator that embeds, clusters and fuses them, candidate
//! expansion, budgeted bandit selection, the outer optimization loop, and a
//! numerical lab for the stochastic-approximation convergence rates.
//!
//! Everything that touches the outside world sits behind a trait:
//! [`gateway::Provider`] for text completion, [`embedding::Encoder`] for
//! sentence embeddings and [`tasks::Predictor`] for running a prompt on an
//! example. Deterministic mock implementations of the first two ship with
//! the crate so the whole pipeline runs offline.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agents;
pub mod coordinator;
pub mod embedding;
pub mod error;
pub mod expansion;
pub mod gateway;
pub mod hash;
pub mod lab;
pub mod metrics;
pub mod optimizer;
pub mod prompt;
pub mod report;
pub mod selection;
pub mod tasks;

mod math;

pub use error::{Error, Result};
