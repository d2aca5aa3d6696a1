//! Command-line front end: experiment configs, metrics files, plots and the
//! `verify` / `train` / `compare` / `plot` commands.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod plot;

pub use commands::{CliError, CliResult, EXIT_CHECK_FAILED, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
