//! Contamination auditing for multiway-parallel MT benchmarks.

pub mod adapter;
pub mod corpus;
pub mod metrics;
pub mod noise;
pub mod rng;
pub mod perturb;
pub mod probes;
pub mod toy;
pub mod ftsim;
pub mod report;
