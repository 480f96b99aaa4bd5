//! Command-line harness: synthetic data generation, preparation, training,
//! tuning, cross-validation, evaluation, prediction export and latency
//! benchmarks, each leaving a run manifest next to its outputs.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod svg;

pub use commands::run;
pub use error::{error_json, error_kind, HarnessError};
