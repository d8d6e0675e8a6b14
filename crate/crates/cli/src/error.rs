//! Error channel of the binary, one variant per exit code.

use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum CliError {
    /// Bad config file, bad flag value, schema mismatch. Exit code 1.
    Validation(String),
    /// A per-step solve failed and the policy aborted the run. Exit code 2.
    Solver(String),
    /// Filesystem trouble. Exit code 3.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    /// Prefix the message with the parameter point it came from, keeping
    /// the variant (and so the exit code).
    pub fn annotate(self, note: &str) -> CliError {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{note}: {m}")),
            CliError::Solver(m) => CliError::Solver(format!("{note}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{note}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<adhesim_core::Error> for CliError {
    fn from(e: adhesim_core::Error) -> Self {
        match &e {
            adhesim_core::Error::SolverFailure { .. }
            | adhesim_core::Error::LineSearchFailure { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

/// Tie an io::Error to the path it happened on.
pub fn io_at(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
