//! Failure classes and their process exit codes.

use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Bad flags or arguments.
#[derive(Debug)]
pub struct Usage(pub String);

/// A required input file or entry is absent.
#[derive(Debug)]
pub struct MissingInput(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}
impl std::error::Error for MissingInput {}

/// Exit code for an error, from the first classified cause in its chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if cause.is::<MissingInput>() || cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<thzct::Error>() {
            return match e {
                thzct::Error::Io { .. } | thzct::Error::Format(_) | thzct::Error::Length { .. } => EXIT_IO,
                thzct::Error::UnsupportedDtype(_) => EXIT_IO,
                thzct::Error::Numeric { .. } | thzct::Error::Divergence { .. } | thzct::Error::Undefined(_) => {
                    EXIT_NUMERIC
                }
                thzct::Error::Validation(_) | thzct::Error::Contract(_) => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}
