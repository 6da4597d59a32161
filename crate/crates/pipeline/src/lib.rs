//! Experiment pipeline around the `mtfuse` estimators: CSV ingestion,
//! synthetic and newsvendor sweeps, metrics, report files and the `mtfuse`
//! command-line tool.

// `!(x > 0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fixture;
pub mod ingest;
pub mod metrics;
pub mod report;

pub use config::{ExperimentConfig, Method, Mode};
pub use error::{PipelineError, Result};
pub use experiment::{cell_seeds, run_experiment, run_newsvendor_experiment, run_newsvendor_sweep, run_synthetic_experiment};
pub use fixture::{generate_fixture, FixtureSpec};
pub use ingest::{ingest_csv, ingest_timed_csv, IngestSchema, TimedDataset};
pub use metrics::{average_test_loss, evaluate_metrics, MetricsReport};
pub use report::{emit_report, ResultRow};
