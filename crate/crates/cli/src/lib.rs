//! Library side of the `nowcast` command-line tool: configuration parsing,
//! input preparation, run manifests and command execution.

pub mod config;
pub mod manifest;
pub mod prepare;
pub mod timefmt;

use std::fmt;

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Exit status for an error: 2 for usage and configuration problems, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(nowcast_core::Error::InvalidConfig(_)) = cause.downcast_ref::<nowcast_core::Error>() {
            return EXIT_USAGE;
        }
    }
    EXIT_RUNTIME
}
