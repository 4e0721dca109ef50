use std::fmt;

use coopitr::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Io(String),
    Input(String),
    NotConverged(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 3,
            CliError::Input(_) => 4,
            CliError::NotConverged(_) => 5,
            CliError::Numerical(_) => 6,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::NotConverged(m) => write!(f, "not converged: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) => CliError::Io(msg),
            // csv wraps both read failures and malformed rows.
            Error::Csv(ref c) if c.is_io_error() => CliError::Io(msg),
            Error::Numerical(_) | Error::ZeroCurvature(_) | Error::DegenerateData(_) => CliError::Numerical(msg),
            _ => CliError::Input(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
