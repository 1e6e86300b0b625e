//! File formats, sweeps and analyses behind the `braess` command.

pub mod analyze;
pub mod app;
pub mod output;
pub mod sweep;
pub mod ue;

use std::fmt;

/// A failure carrying the process exit status it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: unreadable or invalid config, spec, manifest or problem.
    Usage(anyhow::Error),
    /// A simulation aborted.
    Abort(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Abort(_) => 3,
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError::Usage(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Abort(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
