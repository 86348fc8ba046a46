//! Command-line front end and IO layer for the survival pipeline:
//! NIfTI-1 volume readers and writers, clinical CSV ingestion, the pipeline
//! configuration, orchestration, and report emission.

pub mod clinical;
pub mod config;
pub mod error;
pub mod nifti;
pub mod provenance;
pub mod report;
pub mod run;
pub mod tables;

pub use config::PipelineConfig;
pub use error::{CliError, ErrorKind, Result};
pub use run::run_pipeline;
