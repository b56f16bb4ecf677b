//! Batch driver for rolling-window connectedness estimation.

pub mod config;
pub mod run;

pub use config::{parse_document, validate_config, ConfigError, RunConfig};
pub use run::{load_panel, run, RunError, RunSummary};
