//! Run configuration shared by the command line and `--config` files.
//!
//! A config file is a JSON object whose keys mirror the long flags with
//! underscores (`latent_dim` for `--latent-dim`). Relative paths inside a
//! config file resolve against the file's directory. Flags given on the
//! command line override the file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Simulate,
    Fit,
    ImpliedMoments,
    CheckReduction,
    Replicate,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Fit => "fit",
            CommandKind::ImpliedMoments => "implied-moments",
            CommandKind::CheckReduction => "check-reduction",
            CommandKind::Replicate => "replicate",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<CommandKind>,
    pub spec: Option<PathBuf>,
    pub from: Option<PathBuf>,
    pub to: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<String>,
    pub estimator: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub latent_dim: Option<usize>,
    pub groups: Option<Vec<usize>>,
    pub prior: Option<Vec<f64>>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub regularization: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.spec,
            &mut config.from,
            &mut config.to,
            &mut config.data,
            &mut config.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: RunConfig) -> Self {
        overlay!(self, top; command, spec, from, to, data, out, model, estimator, n, seed, reps,
            latent_dim, groups, prior, max_iter, tol, regularization);
        self
    }

    pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
        value.as_ref().ok_or_else(|| {
            CliError::input(format!(
                "missing --{flag} (or `{}` in the config file)",
                flag.replace('-', "_")
            ))
        })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lvm",
    version,
    about = "Simulate, fit and compare probabilistic latent variable models"
)]
pub struct Cli {
    /// JSON run configuration; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from a model spec
    Simulate(SimulateArgs),
    /// Fit an estimator to a CSV dataset
    Fit(FitArgs),
    /// Closed-form mean and covariance of a linear-Gaussian spec
    ImpliedMoments(MomentsArgs),
    /// Check whether two specs are related by a known reduction
    CheckReduction(ReductionArgs),
    /// Repeat simulate and fit with consecutive seeds and aggregate the errors
    Replicate(ReplicateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// ppca, fa, cca, airy or dirichlet-categorical (or the full estimator name)
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Column counts of the two views, e.g. `3,2`
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<usize>>,
    /// Dirichlet concentration, e.g. `1,1,1`
    #[arg(long, value_delimiter = ',')]
    pub prior: Option<Vec<f64>>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub regularization: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReductionArgs {
    #[arg(long, value_name = "FILE")]
    pub from: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub to: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rows per replication
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl Command {
    fn into_config(self) -> RunConfig {
        match self {
            Command::Simulate(a) => RunConfig {
                command: Some(CommandKind::Simulate),
                spec: a.spec,
                n: a.n,
                seed: a.seed,
                out: a.out,
                ..RunConfig::default()
            },
            Command::Fit(a) => RunConfig {
                command: Some(CommandKind::Fit),
                data: a.data,
                model: a.model,
                latent_dim: a.latent_dim,
                groups: a.groups,
                prior: a.prior,
                max_iter: a.max_iter,
                tol: a.tol,
                regularization: a.regularization,
                out: a.out,
                ..RunConfig::default()
            },
            Command::ImpliedMoments(a) => RunConfig {
                command: Some(CommandKind::ImpliedMoments),
                spec: a.spec,
                out: a.out,
                ..RunConfig::default()
            },
            Command::CheckReduction(a) => RunConfig {
                command: Some(CommandKind::CheckReduction),
                from: a.from,
                to: a.to,
                out: a.out,
                ..RunConfig::default()
            },
            Command::Replicate(a) => RunConfig {
                command: Some(CommandKind::Replicate),
                spec: a.spec,
                estimator: a.estimator,
                reps: a.reps,
                seed: a.seed,
                n: a.n,
                latent_dim: a.latent_dim,
                max_iter: a.max_iter,
                tol: a.tol,
                out: a.out,
                ..RunConfig::default()
            },
        }
    }
}

impl Cli {
    /// Merge the config file (if any) with the flags into one run config.
    pub fn resolve(self) -> CliResult<RunConfig> {
        let file = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let Some(command) = self.command else {
            if file.command.is_none() {
                return Err(CliError::input(
                    "no command given; name one or set `command` in the config file",
                ));
            }
            return Ok(file);
        };
        let flags = command.into_config();
        if let (Some(a), Some(b)) = (file.command, flags.command) {
            if a != b {
                return Err(CliError::input(format!(
                    "config file is for `{}` but `{}` was requested",
                    a.name(),
                    b.name()
                )));
            }
        }
        Ok(file.overlay(flags))
    }
}
