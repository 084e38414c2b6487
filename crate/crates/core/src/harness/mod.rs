//! Experiment orchestration: config ingestion, runs, metrics files, sweeps
//! and comparison reports.

pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;

pub use config::{load_config, RunConfig};
pub use experiment::{
    bound_params, decide, prepare, run_experiment, run_prepared, solve, summarize, Decision,
    ExperimentResult, Prepared, RunSummary,
};
pub use report::{compare_report, read_metrics_csv, write_metrics_csv, CompareRow, CompareTable, CSV_COLUMNS};
pub use sweep::{sweep, SweepAxis, SweepRow};
