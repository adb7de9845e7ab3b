//! CLI error type with a stable mapping to process exit codes.
//!
//! | code | meaning                                             |
//! |------|-----------------------------------------------------|
//! | 0    | success                                             |
//! | 1    | internal failure (I/O, pipeline error mid-run)      |
//! | 2    | usage error (bad flags, bad config file)            |
//! | 3    | missing input (dataset, checkpoint, run artifacts)  |
//! | 4    | inconsistent state (would clobber, config mismatch) |

use std::path::PathBuf;

/// Exit code for usage errors; matches what clap itself uses for bad flags.
pub const EXIT_USAGE: i32 = 2;
/// Exit code when a required input file or directory does not exist.
pub const EXIT_MISSING_INPUT: i32 = 3;
/// Exit code when on-disk state conflicts with what was requested.
pub const EXIT_INCONSISTENT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The invocation itself is wrong: bad flag value, malformed config file,
    /// unknown config key. Exit code 2.
    #[error("usage error: {0}")]
    Usage(String),

    /// A required input is absent: dataset directory, checkpoint, log file.
    /// Exit code 3.
    #[error("missing input: {0} ({path})", path = .1.display())]
    MissingInput(String, PathBuf),

    /// On-disk state conflicts with the request: output exists and --force
    /// was not given, or a checkpoint disagrees with the supplied config.
    /// Exit code 4.
    #[error("inconsistent state: {0}")]
    Inconsistent(String),

    /// Anything that failed while actually running the pipeline. Exit code 1.
    #[error(transparent)]
    Core(#[from] pedpose_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::MissingInput(..) => EXIT_MISSING_INPUT,
            CliError::Inconsistent(_) => EXIT_INCONSISTENT,
            CliError::Core(_) | CliError::Io(_) | CliError::Json(_) | CliError::Image(_) => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
