//! Experiment harness for the dual-network workflow: TOML configs, the
//! generate / train / evaluate / plot pipeline, reports and SVG figures.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod report;

pub use commands::Layout;
pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use report::{ExperimentReport, PredictionRow};
