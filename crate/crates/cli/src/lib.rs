//! Configuration, orchestration and artifact output for the `resilience` tool.

// `!(x > 0.0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod svg;

pub use commands::{exit, CliError};
pub use config::{AnalysisConfig, ConfigError, Problem};
