//! Experiment runner for the `dicke` binary: configuration, spectrum cache,
//! and CSV/JSON emission.

pub mod cache;
pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use error::CliError;

use std::ffi::OsString;

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match config::parse_args(args) {
        Ok(Some(c)) => c,
        Ok(None) => return 0,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match run::execute(&config) {
        Ok(summary) => {
            for line in summary.messages {
                eprintln!("{line}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
