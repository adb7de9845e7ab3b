//! Library surface behind the `pedpose` binary.
//!
//! Each subcommand is an ordinary function taking a plain argument struct and
//! returning a summary value, so integration tests can drive commands
//! in-process; the binary in `main.rs` is a thin clap wrapper that maps
//! [`error::CliError`] values to exit codes.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use error::{CliError, Result, EXIT_INCONSISTENT, EXIT_MISSING_INPUT, EXIT_USAGE};

/// Environment variable consulted for the default output root when neither
/// `--out` nor the config provides one.
pub const OUT_ENV: &str = "PEDPOSE_OUT";

/// Default output root: `$PEDPOSE_OUT` if set, else `./pedpose-out`.
pub fn default_out_root() -> std::path::PathBuf {
    std::env::var_os(OUT_ENV)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::path::PathBuf::from("pedpose-out"))
}
