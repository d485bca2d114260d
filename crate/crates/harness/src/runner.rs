use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use planbudget_core::metrics::{aggregate, report_json, write_report_csv, EvalReport, ReportRow, RunOutcome};
use planbudget_core::prompting::QueryRecord;
use planbudget_gateway::Gateway;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::clock::Clock;
use crate::config::ExperimentConfig;
use crate::dataset::load_dataset;
use crate::error::{HarnessError, Result};
use crate::pipeline::{Pipeline, QueryExecution};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const TRACE_JSONL: &str = "trace.jsonl";

/// One line of the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub dataset: String,
    pub model: String,
    #[serde(flatten)]
    pub execution: QueryExecution,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    pub row: ReportRow,
    /// Sorted by query id, then run index.
    pub executions: Vec<QueryExecution>,
    pub dataset: String,
    pub model: String,
}

impl ExperimentOutput {
    pub fn report_csv(&self) -> String {
        let mut buf = Vec::new();
        write_report_csv(std::slice::from_ref(&self.row), &mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn report_json(&self) -> String {
        report_json(std::slice::from_ref(&self.row)).expect("report serializes")
    }

    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for execution in &self.executions {
            let line = TraceLine {
                dataset: self.dataset.clone(),
                model: self.model.clone(),
                execution: execution.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("trace serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (name, body) in [
            (REPORT_CSV, self.report_csv()),
            (REPORT_JSON, self.report_json()),
            (TRACE_JSONL, self.trace_jsonl()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        }
        Ok(())
    }
}

/// Runs every (query, run) pair through `pipeline` with at most `concurrency` in flight.
pub async fn execute_all(
    pipeline: &Pipeline,
    records: &[QueryRecord],
    n_runs: u32,
    concurrency: usize,
) -> Vec<QueryExecution> {
    let tasks = records
        .iter()
        .flat_map(|record| (0..n_runs).map(move |run| (record, run)));
    let mut executions: Vec<QueryExecution> = stream::iter(tasks)
        .map(|(record, run)| pipeline.execute_query(record, run))
        .buffer_unordered(concurrency.max(1))
        .collect()
        .await;
    executions.sort_by(|a, b| {
        a.query_id
            .cmp(&b.query_id)
            .then(a.run_index.cmp(&b.run_index))
    });
    executions
}

pub fn summarize(
    method: &str,
    model: &str,
    dataset: &str,
    executions: Vec<QueryExecution>,
    n_runs: u32,
) -> Result<ExperimentOutput> {
    let outcomes: Vec<RunOutcome> = executions.iter().map(QueryExecution::outcome).collect();
    let report = aggregate(&outcomes, n_runs)?;
    Ok(ExperimentOutput {
        row: ReportRow::new(method, model, dataset, &report),
        report,
        executions,
        dataset: dataset.to_string(),
        model: model.to_string(),
    })
}

pub async fn run_experiment(config: &ExperimentConfig, clock: Arc<dyn Clock>) -> Result<ExperimentOutput> {
    config.validate()?;
    let records = load_dataset(&config.dataset_file(), config.default_level, &config.domain)?;

    let reasoner = Arc::new(config.reasoner.build(&config.base_dir)?);
    let planner: Option<Arc<Gateway>> = match &config.planner {
        Some(p) => Some(Arc::new(p.build(&config.base_dir)?)),
        None => None,
    };
    let pipeline = Pipeline::new(config, planner, reasoner.clone(), clock)?;

    info!(
        queries = records.len(),
        runs = config.n_runs,
        method = config.method.as_str(),
        "starting experiment"
    );
    let executions = execute_all(&pipeline, &records, config.n_runs, config.concurrency).await;
    let failed = executions.iter().filter(|e| e.failure.is_some()).count();
    info!(executions = executions.len(), failed, "experiment finished");

    summarize(
        config.method.as_str(),
        reasoner.model(),
        &config.dataset_label(),
        executions,
        config.n_runs,
    )
}

#[derive(Debug, Deserialize)]
struct TraceSummary {
    dataset: String,
    model: String,
    query_id: String,
    run_index: u32,
    method: String,
    score: f64,
    completion_tokens: u64,
}

/// Re-aggregates a trace file, one report row per (method, model, dataset).
pub fn report_from_trace(text: &str) -> Result<Vec<ReportRow>> {
    let mut groups: BTreeMap<(String, String, String), Vec<RunOutcome>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TraceSummary = serde_json::from_str(line)
            .map_err(|e| HarnessError::Trace(format!("line {}: {e}", i + 1)))?;
        groups
            .entry((t.method, t.model, t.dataset))
            .or_default()
            .push(RunOutcome {
                query_id: t.query_id,
                run_index: t.run_index,
                score: t.score,
                completion_tokens: t.completion_tokens,
            });
    }
    if groups.is_empty() {
        return Err(HarnessError::Trace("trace has no records".into()));
    }
    groups
        .into_iter()
        .map(|((method, model, dataset), outcomes)| {
            let runs: BTreeSet<u32> = outcomes.iter().map(|o| o.run_index).collect();
            let n_runs = runs.iter().max().map_or(0, |m| m + 1);
            let report = aggregate(&outcomes, n_runs)?;
            Ok(ReportRow::new(&method, &model, &dataset, &report))
        })
        .collect()
}
