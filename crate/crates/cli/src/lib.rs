//! Batch front end for `lvm-core`: spec files in, CSV datasets and JSON
//! reports out.
//!
//! Exit status: 0 on success, 1 on numerical or convergence failure, 2 on
//! input or parse errors.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod replicate;

use std::io::Write;

pub use config::{Cli, CommandKind, RunConfig};
pub use error::{CliError, CliResult, EXIT_INPUT, EXIT_NUMERICAL};

/// Execute a fully resolved run config; reports without `out` go to `stdout`.
pub fn run(config: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let command = *RunConfig::require(&config.command, "command")?;
    log::debug!("running `{}`", command.name());
    match command {
        CommandKind::Simulate => commands::cmd_simulate(config),
        CommandKind::Fit => commands::cmd_fit(config, stdout),
        CommandKind::ImpliedMoments => commands::cmd_implied_moments(config, stdout),
        CommandKind::CheckReduction => commands::cmd_check_reduction(config, stdout),
        CommandKind::Replicate => replicate::cmd_replicate(config, stdout),
    }
}
