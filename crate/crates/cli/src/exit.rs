//! Exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage or configuration error |
//! | 3 | computation error (solver failure, invalid numerical input) |
//! | 4 | a post-condition or validation check failed |
//! | 5 | I/O error |

use std::fmt;

use scalesep_core::Error;

pub const USAGE: i32 = 2;
pub const COMPUTATION: i32 = 3;
pub const POSTCONDITION: i32 = 4;
pub const IO: i32 = 5;

#[derive(Debug, Clone)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: USAGE, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::usage(message)
    }

    pub fn postcondition(message: impl Into<String>) -> Self {
        Self { code: POSTCONDITION, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: IO, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Csv(_) => IO,
            _ => COMPUTATION,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}
