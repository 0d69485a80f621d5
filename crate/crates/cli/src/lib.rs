//! Study orchestration for `inspex`: configuration, the two-arm pipeline
//! and the command-line front end.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
pub use pipeline::{run_pipeline, PipelineOutcome, ARM_HARMONIZED, ARM_RAW};
