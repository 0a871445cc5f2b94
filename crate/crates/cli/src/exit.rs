//! Exit codes and the error type that carries them.

use std::fmt;

pub const OK: u8 = 0;
/// File system failures.
pub const IO: u8 = 1;
/// Unreadable, invalid or missing configuration.
pub const CONFIG: u8 = 2;
/// Trainer could not be started, or every candidate of an epoch failed.
pub const EVALUATOR: u8 = 3;
/// Invalid input data: masks, policies, checkpoints, dimension mismatches.
pub const INPUT: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn context(mut self, context: impl fmt::Display) -> Self {
        self.message = format!("{context}: {}", self.message);
        self
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<gridpg_core::Error> for Failure {
    fn from(e: gridpg_core::Error) -> Self {
        use gridpg_core::Error::*;
        let code = match &e {
            Io { .. } => IO,
            Config(_) => CONFIG,
            EpochFailed { .. } => EVALUATOR,
            Domain { .. }
            | InvalidSpace(_)
            | Shape(_)
            | Layout { .. }
            | UndefinedDistance(_)
            | CorruptCheckpoint { .. }
            | Format(_) => INPUT,
        };
        Failure::new(code, e.to_string())
    }
}

pub trait ResultExt<T> {
    /// Replaces the exit code the error would otherwise map to.
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: fmt::Display> ResultExt<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(code, e.to_string()))
    }
}

pub fn io_error(context: impl fmt::Display, e: std::io::Error) -> Failure {
    Failure::new(IO, format!("{context}: {e}"))
}
