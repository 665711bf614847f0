//! Metrics, persistence, experiment configuration and ablation drivers.

pub mod ablate;
pub mod checkpoint;
pub mod corpus;
pub mod eval;
pub mod experiment;
pub mod metrics;
