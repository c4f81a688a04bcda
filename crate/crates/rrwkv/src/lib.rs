//! Linear-time sequence mixing with retrospective medium tokens.
//!
//! This crate implements two closely related recurrent sequence-mixing
//! architectures in plain f64 Rust, together with the machinery needed to
//! verify them end to end:
//!
//! * the RWKV block pair (token-shifted time mixing over a numerically
//!   stabilized exponential-average recurrence, plus a squared-ReLU channel
//!   mixer), and
//! * the RRWKV extension, which periodically squeezes windows of tokens into
//!   "medium" summary tokens, recalibrates them with a small gating network,
//!   interleaves them into the stream, and feeds them back into the channel
//!   mixer.
//!
//! Everything is written to be checked rather than trusted: quadratic
//! reference attention implementations act as oracles for the linear-time
//! recurrence, every block has a hand-derived backward pass validated by
//! central finite differences, and a harness measures operation counts and
//! information-flow path lengths so the architecture's complexity claims can
//! be verified empirically.
//!
//! Start with the runnable examples (`cargo run --example <name>`):
//!
//! * `oracle_equivalence` — the recurrence against quadratic oracles
//! * `overflow_immunity` — extreme key magnitudes and the stabilizer
//! * `gradcheck_report` — finite-difference checks of every block
//! * `train_recall` — a small long-range recall training run
//! * `scaling_bench` — multiply-add counts and wall times over n
//! * `path_lengths` — information-flow path lengths by architecture
//! * `long_range_probe` — gradient attenuation over distance
//!
//! The same capabilities are exposed as subcommands of the `rrwkv` binary
//! (`train`, `eval`, `gradcheck`, `bench`, `pathlen`) driven by a flat
//! `key = value` config file.

// Most hot loops here walk two or more arrays in lockstep by index;
// zipped-iterator rewrites of three-plus sides read worse, not better.
#![allow(clippy::needless_range_loop)]

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod grad;
pub mod harness;
pub mod medium;
pub mod model;
pub mod numerics;
pub mod runner;
pub mod rwkv;

pub use numerics::{Matrix, Rng, Vector};
