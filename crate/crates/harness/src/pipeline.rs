//! One (query, run) pass: optional planning, budget computation and allocation,
//! a single guided reasoning call, and scoring.

use std::sync::Arc;

use planbudget_core::metrics::RunOutcome;
use planbudget_core::prompting::{
    parse_credits, parse_decomposition, render_decomposition_prompt, render_difficulty_prompt,
    render_reasoning_prompt, CreditAssessment, DecompositionPlan, Method, PromptVariant,
    QueryRecord,
};
use planbudget_core::scheduling::{
    schedule_and_allocate, BudgetAllocation, ComplexityScores, ScheduleParams,
};
use planbudget_gateway::{FinishReason, Gateway, GenerationResponse};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::clock::Clock;
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::evaluate::{final_answer, Evaluator};

/// `B_i = budget_init + budget_per_level * level`.
pub fn compute_query_budget(level: u8, budget_init: u64, budget_per_level: u64) -> u64 {
    budget_init + budget_per_level * u64::from(level)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Decompose,
    Credit,
    Reason,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Decompose => "decompose",
            Phase::Credit => "credit",
            Phase::Reason => "reason",
        }
    }
}

/// One gateway call as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub phase: Phase,
    pub request_id: String,
    pub prompt: String,
    pub response: Option<String>,
    pub completion_tokens: u64,
    pub reasoning_tokens: u64,
    pub attempts: u32,
    pub finish_reason: Option<FinishReason>,
    pub latency_ms: f64,
    /// Gateway failure; no response was received.
    pub error: Option<String>,
    /// The planner answered but the answer could not be parsed.
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryExecution {
    pub query_id: String,
    pub run_index: u32,
    pub method: Method,
    pub level: u8,
    pub total_budget: u64,
    pub plan: Option<DecompositionPlan>,
    pub allocation: Option<BudgetAllocation>,
    pub phases: Vec<PhaseTrace>,
    pub prediction: Option<String>,
    pub score: f64,
    /// Billed tokens over every call, failed queries included.
    pub completion_tokens: u64,
    pub failure: Option<String>,
}

impl QueryExecution {
    pub fn outcome(&self) -> RunOutcome {
        RunOutcome {
            query_id: self.query_id.clone(),
            run_index: self.run_index,
            score: self.score,
            completion_tokens: self.completion_tokens,
        }
    }

    /// Number of gateway calls that returned a response.
    pub fn served_calls(&self) -> usize {
        self.phases.iter().filter(|p| p.error.is_none()).count()
    }
}

/// Everything needed to execute queries for one experiment.
pub struct Pipeline {
    pub method: Method,
    pub variant: PromptVariant,
    pub schedule: ScheduleParams,
    pub budget_init: u64,
    pub budget_per_level: u64,
    pub default_level: u8,
    pub hard_cutoff: u32,
    pub benchmarks: String,
    pub evaluator: Evaluator,
    pub planner: Option<Arc<Gateway>>,
    pub reasoner: Arc<Gateway>,
    pub clock: Arc<dyn Clock>,
}

impl Pipeline {
    pub fn new(
        config: &ExperimentConfig,
        planner: Option<Arc<Gateway>>,
        reasoner: Arc<Gateway>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        if config.method.is_planned() && planner.is_none() {
            return Err(HarnessError::Config(format!(
                "method {} needs a planner gateway",
                config.method.as_str()
            )));
        }
        Ok(Self {
            method: config.method,
            variant: config.variant(),
            schedule: config.schedule,
            budget_init: config.budget_init,
            budget_per_level: config.budget_per_level,
            default_level: config.default_level,
            hard_cutoff: config.hard_cutoff,
            benchmarks: config.prompt.benchmarks.clone(),
            evaluator: Evaluator::from_config(config),
            planner,
            reasoner,
            clock,
        })
    }

    fn level_of(&self, record: &QueryRecord) -> u8 {
        record.level.unwrap_or(self.default_level)
    }

    async fn call(
        &self,
        gateway: &Gateway,
        phase: Phase,
        request_id: String,
        prompt: String,
        phases: &mut Vec<PhaseTrace>,
    ) -> Result<GenerationResponse> {
        let request = gateway.request(request_id.clone(), prompt.clone(), Some(self.hard_cutoff));
        let start = self.clock.now();
        let result = gateway.generate(&request).await;
        let latency_ms = (self.clock.now() - start).as_secs_f64() * 1000.0;
        let mut trace = PhaseTrace {
            phase,
            request_id,
            prompt,
            response: None,
            completion_tokens: 0,
            reasoning_tokens: 0,
            attempts: 0,
            finish_reason: None,
            latency_ms,
            error: None,
            parse_error: None,
        };
        match &result {
            Ok(r) => {
                trace.response = Some(r.text.clone());
                trace.completion_tokens = r.completion_tokens;
                trace.reasoning_tokens = r.reasoning_tokens;
                trace.attempts = r.attempts;
                trace.finish_reason = Some(r.finish_reason);
            }
            Err(e) => trace.error = Some(e.to_string()),
        }
        phases.push(trace);
        Ok(result?)
    }

    /// Calls the planner and parses its answer, retrying once with the same prompt
    /// when the answer cannot be parsed.
    async fn planner_step<T>(
        &self,
        phase: Phase,
        base_id: &str,
        prompt: &str,
        phases: &mut Vec<PhaseTrace>,
        parse: impl Fn(&str) -> planbudget_core::Result<T>,
    ) -> Result<T> {
        let planner = self
            .planner
            .as_deref()
            .ok_or_else(|| HarnessError::Config("no planner gateway".into()))?;
        let mut request_id = format!("{base_id}/{}", phase.as_str());
        for attempt in 1..=2 {
            let response = self
                .call(planner, phase, request_id.clone(), prompt.to_string(), phases)
                .await?;
            match parse(&response.text) {
                Ok(value) => return Ok(value),
                Err(e) => {
                    if let Some(last) = phases.last_mut() {
                        last.parse_error = Some(e.to_string());
                    }
                    if attempt == 2 {
                        return Err(e.into());
                    }
                    warn!(request_id, error = %e, "planner output unparseable, retrying once");
                    request_id.push_str("/retry");
                }
            }
        }
        unreachable!("loop returns on the second attempt")
    }

    /// Decomposition and credit assessment for one query.
    pub async fn plan(
        &self,
        record: &QueryRecord,
        run_index: u32,
        phases: &mut Vec<PhaseTrace>,
    ) -> Result<DecompositionPlan> {
        let mut planned_record = record.clone();
        planned_record.level = Some(self.level_of(record));
        let base_id = format!("{}/{run_index}", record.id);

        let prompt = render_decomposition_prompt(&planned_record)?;
        let plan = self
            .planner_step(Phase::Decompose, &base_id, &prompt, phases, parse_decomposition)
            .await?;

        let prompt = render_difficulty_prompt(&planned_record, &plan, &self.benchmarks)?;
        let m = plan.len();
        let assessment: CreditAssessment = self
            .planner_step(Phase::Credit, &base_id, &prompt, phases, |text| parse_credits(text, m))
            .await?;
        Ok(plan.with_assessment(assessment))
    }

    /// Runs the full pipeline. Failures are recorded on the execution, never returned.
    pub async fn execute_query(&self, record: &QueryRecord, run_index: u32) -> QueryExecution {
        let level = self.level_of(record);
        let mut exec = QueryExecution {
            query_id: record.id.clone(),
            run_index,
            method: self.method,
            level,
            total_budget: compute_query_budget(level, self.budget_init, self.budget_per_level),
            plan: None,
            allocation: None,
            phases: Vec::new(),
            prediction: None,
            score: 0.0,
            completion_tokens: 0,
            failure: None,
        };
        if let Err(e) = self.run_phases(record, &mut exec).await {
            warn!(query = %record.id, run_index, error = %e, "query failed");
            exec.failure = Some(e.to_string());
            exec.score = 0.0;
        }
        exec.completion_tokens = exec.phases.iter().map(|p| p.completion_tokens).sum();
        exec
    }

    async fn run_phases(&self, record: &QueryRecord, exec: &mut QueryExecution) -> Result<()> {
        let mut record = record.clone();
        record.level = Some(exec.level);

        if self.method.is_planned() {
            let plan = self.plan(&record, exec.run_index, &mut exec.phases).await?;
            if self.method == Method::PlanAndBudget {
                let credits = plan
                    .credits
                    .as_ref()
                    .ok_or_else(|| HarnessError::Trace("plan has no credits".into()))?;
                let scores = ComplexityScores::new(credits.iter().map(|&c| c as f64).collect())?;
                exec.allocation = Some(schedule_and_allocate(&scores, &self.schedule, exec.total_budget)?);
            }
            exec.plan = Some(plan);
        }

        let prompt = render_reasoning_prompt(
            &self.variant,
            &record,
            exec.plan.as_ref(),
            exec.allocation.as_ref(),
            self.method.uses_global_budget().then_some(exec.total_budget),
        )?;
        let request_id = format!("{}/{}/{}", record.id, exec.run_index, Phase::Reason.as_str());
        let response = self
            .call(&self.reasoner, Phase::Reason, request_id, prompt, &mut exec.phases)
            .await?;
        let prediction = final_answer(&response.text).to_string();
        exec.score = self.evaluator.score(&record, &prediction).await?;
        exec.prediction = Some(prediction);
        Ok(())
    }
}
