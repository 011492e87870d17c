//! Experiment configuration, runners and reports.

pub mod config;
pub mod experiments;
pub mod report;
pub mod slope;

pub use config::{DeltaRule, DriftSource, ExperimentConfig, ExperimentKind};
pub use experiments::run;
pub use report::{Check, ExperimentReport, ReportRow};
pub use slope::{fit_loglog_slope, SlopeFit};
