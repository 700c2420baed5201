//! Evaluation harness: sensor sources and datasets, the estimator loop,
//! run reports and trajectory metrics.

pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use config::PipelineConfig;
pub use error::{HarnessError, Result};
pub use pipeline::run_pipeline;
pub use report::RunReport;
