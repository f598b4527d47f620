//! Pipeline driver behind the `skytrack` command.
//!
//! Every stage reads its declared inputs, writes its outputs into the output
//! directory and leaves a `<stage>_summary.toml` next to them recording the
//! SHA-256 of each input and output, the stage parameters and its results.

pub mod config;
mod stages;
mod summary;

use std::path::PathBuf;

use skytrack::io::IoError;
use thiserror::Error;

pub use config::{files, Overrides, PipelineConfig, Preset};
pub use stages::{run_all, run_stage, Stage, RUN_ALL_STAGES};
pub use summary::{sha256_file, StageSummary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("input file {} does not exist", .0.display())]
    MissingInput(PathBuf),
    #[error("{}: {source}", path.display())]
    Read { path: PathBuf, source: IoError },
    #[error("{}: {source}", path.display())]
    Write { path: PathBuf, source: IoError },
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    /// Process exit status: 2 for configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}
