use std::io::ErrorKind;

use thiserror::Error;

/// Failures with a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_VERSION: i32 = 4;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::MissingInput(_) => EXIT_MISSING_INPUT,
                CliError::Config(_) => EXIT_CONFIG,
            };
        }
        if let Some(e) = cause.downcast_ref::<leafscan::Error>() {
            match e {
                leafscan::Error::VersionMismatch { .. } => return EXIT_VERSION,
                leafscan::Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => {
                    return EXIT_MISSING_INPUT
                }
                _ => {}
            }
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if e.kind() == ErrorKind::NotFound {
                return EXIT_MISSING_INPUT;
            }
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return EXIT_CONFIG;
        }
    }
    EXIT_FAILURE
}
