//! Experiment runner for structured meta-learning: database generation,
//! training, similarity analysis, plotting and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod plot;
pub mod report;

pub use commands::{cmd_analyze, cmd_gen, cmd_plot, cmd_report, cmd_train};
pub use config::{ExperimentConfig, Method, Overrides};
pub use error::{CliError, CliResult};
pub use report::RunReport;
