use std::fmt;

use stcp_core::net::{BenchError, HandshakeFailure, SetupError};
use stcp_core::vl::VlError;

/// A failed command: a reason code for scripts, a detail for people, and
/// the process exit status.
#[derive(Debug)]
pub struct CliError {
    pub reason: String,
    pub detail: String,
    pub exit: u8,
}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_HANDSHAKE: u8 = 3;
pub const EXIT_RESUME: u8 = 4;
pub const EXIT_SCENARIO: u8 = 5;
pub const EXIT_BENCH: u8 = 6;

impl CliError {
    pub fn new(reason: impl Into<String>, detail: impl Into<String>, exit: u8) -> Self {
        CliError {
            reason: reason.into(),
            detail: detail.into(),
            exit,
        }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Self::new("ConfigError", detail, EXIT_USAGE)
    }

    pub fn usage(detail: impl Into<String>) -> Self {
        Self::new("Usage", detail, EXIT_USAGE)
    }

    pub fn io(detail: impl Into<String>) -> Self {
        Self::new("IoError", detail, EXIT_FAILURE)
    }

    /// `error: reason=<Code> detail="..."`, always one line.
    pub fn line(&self) -> String {
        let detail = self.detail.replace(['\n', '\r'], " ").replace('"', "'");
        format!("error: reason={} detail=\"{}\"", self.reason, detail)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<HandshakeFailure> for CliError {
    fn from(f: HandshakeFailure) -> Self {
        let detail = if f.detail.is_empty() {
            f.to_string()
        } else {
            format!("{f}: {}", f.detail)
        };
        CliError::new(f.reason.as_str(), detail, EXIT_HANDSHAKE)
    }
}

impl From<SetupError> for CliError {
    fn from(e: SetupError) -> Self {
        CliError::config(e.0)
    }
}

impl From<VlError> for CliError {
    fn from(e: VlError) -> Self {
        let reason = match &e {
            VlError::Expired { .. } => "SessionExpired",
            VlError::Unrecoverable { .. } => "Unrecoverable",
            VlError::Persistence { .. } => "PersistenceError",
            VlError::FlightIdTooLong(_) => "ConfigError",
        };
        CliError::new(reason, e.to_string(), EXIT_RESUME)
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::NoRepetitions => CliError::usage(e.to_string()),
            BenchError::Failed { failure, .. } => {
                CliError::new(failure.reason.as_str(), format!("benchmark run failed: {failure}"), EXIT_BENCH)
            }
            BenchError::Transport(t) => CliError::new("TransportError", t.to_string(), EXIT_BENCH),
        }
    }
}
