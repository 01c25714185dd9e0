//! Batch analysis of f0 contour corpora: ingestion, per-family mean models,
//! CL0 versus CL6 covariance tests and tangent PCA, with CSV outputs and a
//! manifest that reproduces each run.

pub mod config;
pub mod error;
pub mod family;
pub mod ingest;
pub mod output;
pub mod pipeline;
pub mod scenario;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
pub use family::TonalFamily;
pub use pipeline::{run, run_pipeline, PipelineReport, Stages};
