//! Command-line driver for butterflow: training, evaluation, sampling,
//! benchmarks, permutation decomposition and oracle verification.

pub mod bench;
pub mod checkpoint;
pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
