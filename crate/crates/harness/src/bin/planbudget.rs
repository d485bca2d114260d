use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use planbudget_core::bam::{allocate_closed_form, allocate_kkt, AllocationInstance, InstanceFile, DEFAULT_TOL};
use planbudget_core::metrics::{report_json, write_report_csv};
use planbudget_core::prompting::QueryRecord;
use planbudget_core::scheduling::AllocationRequest;
use planbudget_core::uncertainty::{decompose, EnsembleFile, PredictiveEnsemble};
use planbudget_harness::clock::{Clock, FrozenClock, SystemClock};
use planbudget_harness::pipeline::Pipeline;
use planbudget_harness::tables::{check_rows, parse_fixture, verify_tables, TABLE_TOLERANCE, PUBLISHED_RESULTS};
use planbudget_harness::{report_from_trace, run_experiment, ExperimentConfig};
use serde_json::json;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "planbudget", version, about = "Planned, budgeted LLM reasoning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose one question and assess its sub-questions; prints the plan as JSON.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        level: Option<u8>,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long, default_value = "cli")]
        id: String,
    },
    /// Integer budget allocation for one request file.
    Allocate { request: PathBuf },
    /// Continuous budget allocation for one instance file.
    Bam {
        instance: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Total, aleatoric and epistemic uncertainty of an ensemble file.
    Uq { ensemble: PathBuf },
    /// Runs a full experiment and writes report.csv, report.json and trace.jsonl.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Record zero latency so traces are reproducible.
        #[arg(long)]
        frozen_clock: bool,
    },
    /// Re-aggregates a trace file.
    Report {
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Recomputes E³ and A/T for published result rows; uses the bundled rows when no file is given.
    VerifyTables { fixture: Option<PathBuf> },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

async fn plan(config: &Path, question: String, level: Option<u8>, domain: Option<String>, id: String) -> anyhow::Result<()> {
    let config = ExperimentConfig::load(config)?;
    let Some(planner_cfg) = &config.planner else {
        bail!("config has no [planner] backend");
    };
    let planner = Arc::new(planner_cfg.build(&config.base_dir)?);
    let reasoner = Arc::new(config.reasoner.build(&config.base_dir)?);
    let pipeline = Pipeline::new(&config, Some(planner), reasoner, Arc::new(SystemClock::new()))?;
    let record = QueryRecord {
        id,
        question,
        gold: String::new(),
        level: Some(level.unwrap_or(config.default_level)),
        reference: None,
        domain: domain.unwrap_or_else(|| config.domain.clone()),
    };
    record.validate()?;
    let mut phases = Vec::new();
    let plan = pipeline.plan(&record, 0, &mut phases).await?;
    let tokens: u64 = phases.iter().map(|p| p.completion_tokens).sum();
    print_json(&json!({"plan": plan, "completion_tokens": tokens}))
}

fn verify(fixture: Option<PathBuf>) -> anyhow::Result<bool> {
    let check = match fixture {
        Some(path) => verify_tables(&path)?,
        None => check_rows(parse_fixture(PUBLISHED_RESULTS)?, TABLE_TOLERANCE)?,
    };
    print!("{}", check.render());
    Ok(check.passed())
}

async fn dispatch(command: Command) -> anyhow::Result<bool> {
    match command {
        Command::Plan {
            config,
            question,
            level,
            domain,
            id,
        } => plan(&config, question, level, domain, id).await?,
        Command::Allocate { request } => {
            let request: AllocationRequest = read_json(&request)?;
            print_json(&request.run()?)?;
        }
        Command::Bam { instance, tol } => {
            let file: InstanceFile = read_json(&instance)?;
            let instance = AllocationInstance::try_from(file)?;
            let solution = allocate_kkt(&instance, tol)?;
            let closed_form = allocate_closed_form(&instance);
            print_json(&json!({
                "kkt": solution,
                "closed_form": {
                    "budgets": closed_form,
                    "objective": instance.objective(&closed_form),
                },
            }))?;
        }
        Command::Uq { ensemble } => {
            let file: EnsembleFile = read_json(&ensemble)?;
            print_json(&decompose(&PredictiveEnsemble::try_from(file)?))?;
        }
        Command::Run {
            config,
            out,
            frozen_clock,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let clock: Arc<dyn Clock> = if frozen_clock {
                Arc::new(FrozenClock)
            } else {
                Arc::new(SystemClock::new())
            };
            let output = run_experiment(&config, clock).await?;
            output.write(&out)?;
            print!("{}", output.report_csv());
        }
        Command::Report { trace, format } => {
            let text = std::fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let rows = report_from_trace(&text)?;
            match format {
                Format::Csv => write_report_csv(&rows, std::io::stdout())?,
                Format::Json => println!("{}", report_json(&rows)?),
            }
        }
        Command::VerifyTables { fixture } => return verify(fixture),
    }
    Ok(true)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse().command).await {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
