use std::path::PathBuf;

use lvm_core::LvmError;
use thiserror::Error;

/// Exit status for input and parse failures.
pub const EXIT_INPUT: i32 = 2;
/// Exit status for numerical and convergence failures.
pub const EXIT_NUMERICAL: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Numerical(String),

    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] LvmError),
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError::Input(message.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Read { .. } => EXIT_INPUT,
            CliError::Numerical(_) | CliError::Write { .. } => EXIT_NUMERICAL,
            CliError::Model(e) if e.is_input_error() => EXIT_INPUT,
            CliError::Model(_) => EXIT_NUMERICAL,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
