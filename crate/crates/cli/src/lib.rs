//! Experiment driver: sketch benchmarks, privacy sweeps, training runs and
//! gradient histograms, all writing line-delimited JSON records.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod error;
pub mod output;
pub mod sweep;
pub mod train;

pub use error::CliError;
