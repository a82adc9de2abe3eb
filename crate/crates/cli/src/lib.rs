//! Command-line front end for rotation win statistics: dataset and
//! configuration parsing, the `analyze` report, and the simulation runner.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

pub use analysis::{analyze, render_text, AnalysisReport, AnalyzeOptions};
pub use config::{load_config, parse_config, AnalysisConfig, ConfigFile};
pub use dataset::{parse_dataset, read_dataset, write_dataset};
pub use error::{CliError, Result};
