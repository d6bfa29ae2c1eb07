//! Library surface of the experiment runner; the `proxem` binary is a
//! thin wrapper. Exposed so integration tests can drive runs in-process.

use std::path::Path;

pub mod config;
pub mod output;
pub mod runner;

/// Errors mapped onto process exit codes: configuration and IO problems
/// exit 2, numerical failures exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<proxem::Error> for CliError {
    fn from(e: proxem::Error) -> Self {
        use proxem::Error as E;
        match e {
            E::Unphysical { .. }
            | E::PostSelectionUnderflow { .. }
            | E::ImaginaryResidue { .. }
            | E::IllConditioned { .. }
            | E::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

/// Terminal status of a run that produced output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    /// Fit-map produced a minimum-norm solution from a rank-deficient
    /// design; artifacts are written but the exit status flags it.
    Underdetermined,
}

impl RunStatus {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunStatus::Success => 0,
            RunStatus::Underdetermined => 4,
        }
    }
}

pub fn run_from_files(
    config_path: &Path,
    overrides: &config::Overrides,
    out_dir: &Path,
) -> Result<RunStatus, CliError> {
    let cfg = config::load(config_path, overrides)?;
    runner::run(&cfg, overrides.preset, out_dir)
}
