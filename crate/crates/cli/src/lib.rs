//! Command implementations behind the `byzasync` binary.
//!
//! Every command returns a [`CliError`] whose variant fixes the process exit
//! status: malformed input exits with 2, failures while computing exit with 1.

pub mod aggregate;
pub mod config;
pub mod report;
pub mod run;
pub mod svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Input that does not parse or validate. Exit status 2.
    #[error("{0}")]
    Input(String),
    /// A failure after the input was accepted. Exit status 1.
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn float17(x: f64) -> String {
    format!("{x:.16e}")
}
