//! Library side of the `lab` executable, so commands can be driven in-process.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod data;
pub mod exit;

use std::fs;
use std::path::Path;

pub use config::{Command, RunConfig};
pub use exit::CliError;

/// Resolves defaults, the optional config file and `--key value` overrides.
pub fn resolve(command: Command, config: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut layers = Vec::new();
    if let Some(path) = config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::missing(format!("config file {}: {e}", path.display())))?;
        layers.push(config::parse_pairs(&text)?);
    }
    layers.push(config::parse_overrides(overrides)?);
    RunConfig::resolve(command, &layers)
}

/// Runs one command end to end and returns its summary.
pub fn execute(command: Command, config: Option<&Path>, overrides: &[String]) -> Result<String, CliError> {
    let cfg = resolve(command, config, overrides)?;
    commands::run(&cfg)
}
