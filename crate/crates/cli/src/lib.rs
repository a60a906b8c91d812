//! Command-line front end: data generation, training runs, sweeps and the population analysis.

pub mod commands;
pub mod config;
mod error;

pub use commands::{run, Cli};
pub use error::{CliError, Result};
