use std::fmt;

use lab_core::Error;

pub const OK: i32 = 0;
pub const CONFIG: i32 = 2;
pub const MISSING_INPUT: i32 = 3;
pub const NUMERIC: i32 = 4;
pub const DATA: i32 = 5;

/// An error carrying the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(CONFIG, message)
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self::new(MISSING_INPUT, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(DATA, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Shape { .. } => CONFIG,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => MISSING_INPUT,
            Error::Io(_) | Error::Format(_) => MISSING_INPUT,
            Error::NonFinite(_) | Error::NonScalarLoss(_) => NUMERIC,
            Error::Data(_) => DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::new(MISSING_INPUT, format!("csv: {e}"))
    }
}
