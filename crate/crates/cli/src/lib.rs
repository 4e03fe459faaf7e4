//! Experiment harness: config parsing, command orchestration and file output
//! for the `neckgap` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;

pub use commands::{run, Command, RunOptions, RunOutcome};
pub use config::ExperimentConfig;
pub use error::{ExitStatus, HarnessError};
pub use manifest::RunManifest;
