//! Exit-code classification.

use std::fmt;

use classrepsim::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NON_FINITE: u8 = 3;

/// Invalid configuration, arguments or input paths.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(Error::NonFiniteLoss { .. }) = cause.downcast_ref::<Error>() {
            return EXIT_NON_FINITE;
        }
    }
    EXIT_RUNTIME
}
