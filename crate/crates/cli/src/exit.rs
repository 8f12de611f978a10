//! Error classes and their process exit codes.

use std::fmt;

/// Bad arguments or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

/// A prerequisite artifact does not exist.
#[derive(Debug)]
pub struct MissingArtifact(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for MissingArtifact {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn missing(what: impl Into<String>) -> anyhow::Error {
    MissingArtifact(format!("missing {}", what.into())).into()
}

pub const OK: i32 = 0;
pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;
pub const RUNTIME: i32 = 3;

/// 1 for usage errors, 2 for unreadable or missing inputs, 3 otherwise.
pub fn code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if cause.is::<MissingArtifact>() {
            return DATA;
        }
        if let Some(e) = cause.downcast_ref::<flygm::Error>() {
            use flygm::Error::*;
            return match e {
                Parse { .. } | BadMagic { .. } | Version(_) | Crc { .. } | Corrupt(_) | File { .. } | Io(_) | Csv(_) => DATA,
                _ => RUNTIME,
            };
        }
        if cause.is::<std::io::Error>() {
            return DATA;
        }
    }
    RUNTIME
}
