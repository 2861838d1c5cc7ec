//! Benchmark harness: synthetic scenarios, hindsight oracle, metrics,
//! ablation runner, and reporting.

pub mod config;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod scenario;

pub use config::{BenchConfig, Objective, ScenarioConfig};
pub use metrics::{constraint_satisfaction, regression_metrics, ConstraintCheck, RegressionMetrics};
pub use oracle::{oracle_value, OracleValue};
pub use report::{emit_report, emit_sweep};
pub use runner::{run_benchmark, sweep_segments, BenchReport, ControlMetrics, SweepReport, Variant};
pub use scenario::{campaign_specs, synth_day_records, synth_impressions, CampaignSpec};

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum BenchError {
    Invalid(String),
    Io(String),
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::Invalid(msg) => write!(f, "invalid input: {msg}"),
            BenchError::Io(msg) => write!(f, "io: {msg}"),
        }
    }
}

impl std::error::Error for BenchError {}
