//! Subcommand implementations for the `flowpix` binary.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{PipelineConfig, RunLayout};
pub use error::{CliError, ErrorKind, Result};
