//! Experiment harness: synthetic long-range tasks, the training loop, the
//! operation-count and wall-time benchmarks, and information-flow path
//! analysis.

pub mod bench;
pub mod graph;
pub mod task;
pub mod train;
