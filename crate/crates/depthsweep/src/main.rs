//! Thin binary entry point; all behavior lives in the library's `cli`
//! module so examples and tests can drive the same code paths.

use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(depthsweep::cli::run() as u8)
}
