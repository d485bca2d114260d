//! Experiment runner for planned, budgeted reasoning: dataset loading, per-query
//! budgets, the plan / credit / reason pipeline against configured gateways,
//! multi-run aggregation, and report and trace output.

pub mod clock;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod pipeline;
pub mod runner;
pub mod tables;

pub use clock::{Clock, FrozenClock, SystemClock};
pub use config::{EvaluatorKind, ExperimentConfig, PromptConfig, DEFAULT_HARD_CUTOFF};
pub use error::{HarnessError, Result};
pub use pipeline::{compute_query_budget, Phase, PhaseTrace, Pipeline, QueryExecution};
pub use runner::{report_from_trace, run_experiment, ExperimentOutput, TraceLine};
pub use tables::{verify_tables, TableCheck, PUBLISHED_RESULTS, TABLE_TOLERANCE};
