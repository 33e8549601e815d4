//! Command-line front end for the `vfn` library.

pub mod commands;
pub mod config;

pub use commands::{run, Cli, CliError, EvalReport, LogitsRecord};
pub use config::{DataConfig, DataFormat, OutputConfig, RunConfig};
