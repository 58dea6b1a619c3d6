//! Config-driven runs of the expansion pipeline: dataset synthesis, training,
//! inference replay and evaluation. `main.rs` is a thin clap wrapper around
//! the `cmd_*` functions here.

use std::fmt::Display;
use std::path::PathBuf;

mod commands;
pub mod config;

pub use commands::{cmd_eval, cmd_expand, cmd_synthesize, cmd_train, EvalArgs, RunManifest, TrainOutcome};
pub use commands::{BASELINE_METHOD, FAILED_MARKER, METHOD};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, bad input file or incompatible artifacts.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] bootgan_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn config(msg: impl Display) -> Self {
        CliError::Config(msg.to_string())
    }

    /// 2 for config and validation failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        use bootgan_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Validation(_) | E::Parse { .. }) => 2,
            _ => 1,
        }
    }
}
