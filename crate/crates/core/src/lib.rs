//! Simulation toolkit for the bandit survey problem: choosing which crowd of
//! workers to ask next, and when to stop asking, for a single multiple-choice
//! microtask.

pub mod benchmark;
pub mod error;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod seed;
pub mod selection;
pub mod stopping;
pub mod workload;

pub use error::{Error, Result};
