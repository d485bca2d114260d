//! Prompt templates and planner-output parsing.
//!
//! Templates are plain text with `<name>` placeholders, filled in a single pass so
//! that user-supplied text is never re-scanned for placeholders. `<think>` is part
//! of the prompt itself and is left alone.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::scheduling::{allocate, BudgetAllocation};

pub const DECOMPOSITION_TEMPLATE: &str = include_str!("../templates/decomposition.txt");
/// Worked example embedded in the decomposition prompt.
pub const DECOMPOSITION_EXAMPLE: &str = include_str!("../templates/decomposition_example.txt");
pub const DIFFICULTY_TEMPLATE: &str = include_str!("../templates/difficulty.txt");
pub const VANILLA_TEMPLATE: &str = include_str!("../templates/vanilla.txt");
pub const GLOBAL_BUDGET_TEMPLATE: &str = include_str!("../templates/global_budget.txt");
pub const PLANNED_VANILLA_TEMPLATE: &str = include_str!("../templates/planned_vanilla.txt");
pub const PLANNED_GLOBAL_TEMPLATE: &str = include_str!("../templates/planned_global.txt");
pub const PLAN_AND_BUDGET_TEMPLATE: &str = include_str!("../templates/plan_and_budget.txt");

/// Cue that ends the decomposition prompt.
pub const DECOMPOSITION_CUE: &str = "Decomposed Sub-questions:";

/// Placeholder names recognized by the renderer.
pub const PLACEHOLDERS: &[&str] = &[
    "domain",
    "problem",
    "level",
    "query",
    "reference",
    "decomposed",
    "budget",
    "instruction",
    "output_format",
    "benchmarks",
    "steps",
    "example",
];

static PLACEHOLDER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"<({})>", PLACEHOLDERS.join("|"))).expect("placeholder regex")
});
static ITEM_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(\d+)\s*[.)]\s*(.*)$").expect("item regex"));
static HINT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*hint\s*:\s*(.*)$").expect("hint regex"));
static BUDGET_PHRASE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"using up to (\d+) words").expect("budget phrase regex"));

/// Reasoning-prompt variants, one per evaluated method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vanilla,
    GlobalBudget,
    PlannedVanilla,
    PlannedGlobal,
    PlanAndBudget,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Vanilla,
        Method::GlobalBudget,
        Method::PlannedVanilla,
        Method::PlannedGlobal,
        Method::PlanAndBudget,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::GlobalBudget => "global_budget",
            Method::PlannedVanilla => "planned_vanilla",
            Method::PlannedGlobal => "planned_global",
            Method::PlanAndBudget => "plan_and_budget",
        }
    }

    pub fn is_planned(&self) -> bool {
        matches!(
            self,
            Method::PlannedVanilla | Method::PlannedGlobal | Method::PlanAndBudget
        )
    }

    pub fn uses_global_budget(&self) -> bool {
        matches!(self, Method::GlobalBudget | Method::PlannedGlobal)
    }

    pub fn template(&self) -> &'static str {
        match self {
            Method::Vanilla => VANILLA_TEMPLATE,
            Method::GlobalBudget => GLOBAL_BUDGET_TEMPLATE,
            Method::PlannedVanilla => PLANNED_VANILLA_TEMPLATE,
            Method::PlannedGlobal => PLANNED_GLOBAL_TEMPLATE,
            Method::PlanAndBudget => PLAN_AND_BUDGET_TEMPLATE,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::domain(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub question: String,
    pub gold: String,
    /// Difficulty in [1, 5].
    pub level: Option<u8>,
    pub reference: Option<String>,
    pub domain: String,
}

impl QueryRecord {
    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::domain(format!("query {} has an empty question", self.id)));
        }
        if let Some(level) = self.level {
            if !(1..=5).contains(&level) {
                return Err(Error::domain(format!(
                    "query {} has level {level}, expected 1..=5",
                    self.id
                )));
            }
        }
        Ok(())
    }

    fn require_level(&self) -> Result<u8> {
        self.level.ok_or(Error::MissingInput("<level>"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestion {
    /// 1-based position.
    pub index: usize,
    pub text: String,
    pub hint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecompositionPlan {
    pub subquestions: Vec<SubQuestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credits: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluated_levels: Option<EvaluatedLevels>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvaluatedLevels {
    pub problem: Option<u8>,
    pub subquestions: Vec<Option<u8>>,
}

impl DecompositionPlan {
    /// Plan from `(text, hint)` pairs, indexed from 1.
    pub fn from_pairs<S: Into<String>, H: Into<String>>(pairs: impl IntoIterator<Item = (S, H)>) -> Self {
        let subquestions = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (text, hint))| SubQuestion {
                index: i + 1,
                text: text.into(),
                hint: hint.into(),
            })
            .collect();
        Self {
            subquestions,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.subquestions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subquestions.is_empty()
    }

    pub fn with_assessment(mut self, assessment: CreditAssessment) -> Self {
        self.credits = Some(assessment.credits);
        self.evaluated_levels = Some(EvaluatedLevels {
            problem: assessment.problem_level,
            subquestions: assessment.levels,
        });
        self
    }
}

/// Numbered list in the planner's output format: `N. text` then `Hint: hint`.
pub fn render_plan(plan: &DecompositionPlan) -> String {
    plan.subquestions
        .iter()
        .map(|sq| render_item(sq, None))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn render_item(sq: &SubQuestion, budget: Option<u64>) -> String {
    let mut out = format!("{}. {}", sq.index, sq.text);
    if let Some(b) = budget {
        out.push_str(&format!(
            "\nPlease only think a little, and directly solve it using up to {b} words."
        ));
    }
    if !sq.hint.is_empty() {
        out.push_str("\nHint: ");
        out.push_str(&sq.hint);
    }
    out
}

fn render_budgeted_plan(plan: &DecompositionPlan, budgets: &BudgetAllocation) -> String {
    plan.subquestions
        .iter()
        .zip(&budgets.budgets)
        .map(|(sq, &b)| render_item(sq, Some(b)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Fills `<name>` placeholders in one pass. Lines mentioning an absent
/// placeholder listed in `optional_lines` are dropped.
fn fill(template: &str, lookup: impl Fn(&str) -> Option<String>, optional_lines: &[&str]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    for line in template.split_inclusive('\n') {
        let drop = optional_lines.iter().any(|name| {
            line.contains(&format!("<{name}>")) && lookup(name).is_none()
        });
        if drop {
            continue;
        }
        let replaced = PLACEHOLDER_RE.replace_all(line, |caps: &regex::Captures<'_>| {
            lookup(&caps[1]).unwrap_or_else(|| caps[0].to_string())
        });
        out.push_str(&replaced);
    }
    out
}

/// Placeholders of the recognized set still present in `text`.
pub fn residual_placeholders(text: &str) -> Vec<String> {
    PLACEHOLDER_RE
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

pub fn render_decomposition_prompt(record: &QueryRecord) -> Result<String> {
    if record.question.trim().is_empty() {
        return Err(Error::domain("cannot decompose an empty question"));
    }
    let level = record.require_level()?;
    Ok(fill(
        DECOMPOSITION_TEMPLATE,
        |name| match name {
            "domain" => Some(record.domain.clone()),
            "problem" => Some(record.question.clone()),
            "level" => Some(level.to_string()),
            "example" => Some(DECOMPOSITION_EXAMPLE.trim_end().to_string()),
            _ => None,
        },
        &[],
    ))
}

pub fn render_difficulty_prompt(
    record: &QueryRecord,
    plan: &DecompositionPlan,
    benchmarks: &str,
) -> Result<String> {
    if record.question.trim().is_empty() {
        return Err(Error::domain("cannot assess an empty question"));
    }
    if plan.is_empty() {
        return Err(Error::MissingInput("<steps>"));
    }
    Ok(fill(
        DIFFICULTY_TEMPLATE,
        |name| match name {
            "domain" => Some(record.domain.clone()),
            "problem" => Some(record.question.clone()),
            "benchmarks" => Some(benchmarks.to_string()),
            "steps" => Some(format!("\n{}", render_plan(plan))),
            _ => None,
        },
        &[],
    ))
}

/// Dataset-specific wording for a reasoning prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub kind: Method,
    pub instruction: String,
    pub output_format: String,
}

pub fn render_reasoning_prompt(
    variant: &PromptVariant,
    record: &QueryRecord,
    plan: Option<&DecompositionPlan>,
    budgets: Option<&BudgetAllocation>,
    global_budget: Option<u64>,
) -> Result<String> {
    let kind = variant.kind;
    if record.question.trim().is_empty() {
        return Err(Error::domain("cannot render a prompt for an empty question"));
    }

    let decomposed = if kind.is_planned() {
        let plan = plan.filter(|p| !p.is_empty()).ok_or(Error::MissingInput("<decomposed>"))?;
        if kind == Method::PlanAndBudget {
            let budgets = budgets.ok_or(Error::MissingInput("<budget>"))?;
            if budgets.len() != plan.len() {
                return Err(Error::domain(format!(
                    "{} budgets for {} sub-questions",
                    budgets.len(),
                    plan.len()
                )));
            }
            Some(render_budgeted_plan(plan, budgets))
        } else {
            Some(render_plan(plan))
        }
    } else {
        None
    };
    let budget = if kind.uses_global_budget() {
        Some(global_budget.ok_or(Error::MissingInput("<budget>"))?)
    } else {
        None
    };
    let level = if kind.is_planned() {
        Some(record.require_level()?)
    } else {
        None
    };

    Ok(fill(
        kind.template(),
        |name| match name {
            "instruction" => Some(variant.instruction.clone()),
            "output_format" => Some(variant.output_format.clone()),
            "query" => Some(record.question.clone()),
            "reference" => record.reference.clone(),
            "level" => level.map(|l| l.to_string()),
            "decomposed" => decomposed.clone(),
            "budget" => budget.map(|b| b.to_string()),
            _ => None,
        },
        &["reference"],
    ))
}

/// Per-sub-question word budgets embedded in a rendered prompt, in order.
pub fn extract_budget_phrases(prompt: &str) -> Vec<u64> {
    BUDGET_PHRASE_RE
        .captures_iter(prompt)
        .filter_map(|c| c[1].parse().ok())
        .collect()
}

fn strip_markdown(line: &str) -> String {
    line.replace("**", "").replace("__", "")
}

/// Extracts numbered sub-questions and their hints from planner output.
pub fn parse_decomposition(text: &str) -> Result<DecompositionPlan> {
    let mut items: Vec<(String, String)> = Vec::new();
    // whether the current item still accepts continuation lines
    let mut open = false;
    let mut in_hint = false;

    for raw in text.lines() {
        let line = strip_markdown(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            open = false;
            continue;
        }
        if let Some(caps) = ITEM_RE.captures(trimmed) {
            let body = caps[2].trim();
            if !body.is_empty() {
                items.push((body.to_string(), String::new()));
                open = true;
                in_hint = false;
                continue;
            }
        }
        if let Some(caps) = HINT_RE.captures(trimmed) {
            if let Some(last) = items.last_mut() {
                let hint = caps[1].trim();
                if last.1.is_empty() {
                    last.1 = hint.to_string();
                } else {
                    last.1.push(' ');
                    last.1.push_str(hint);
                }
                open = true;
                in_hint = true;
            }
            continue;
        }
        if open {
            if let Some(last) = items.last_mut() {
                let target = if in_hint { &mut last.1 } else { &mut last.0 };
                target.push(' ');
                target.push_str(trimmed);
            }
        }
    }

    if items.is_empty() {
        return Err(Error::parse("no numbered sub-questions found", text));
    }
    if !(2..=5).contains(&items.len()) {
        warn!(count = items.len(), "decomposition outside the requested 2 to 5 sub-questions");
    }
    Ok(DecompositionPlan::from_pairs(items))
}

/// Credits and levels returned by the difficulty prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditAssessment {
    /// Positive integers summing to exactly 100.
    pub credits: Vec<u64>,
    pub levels: Vec<Option<u8>>,
    pub problem_level: Option<u8>,
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    #[serde(default)]
    evaluated_level: Option<serde_json::Value>,
    #[serde(default)]
    credit: Option<serde_json::Value>,
}

fn as_number(value: &serde_json::Value) -> Option<f64> {
    match value {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().trim_end_matches('%').trim().parse().ok(),
        _ => None,
    }
}

fn clamp_level(value: Option<&serde_json::Value>) -> Option<u8> {
    value
        .and_then(as_number)
        .filter(|x| x.is_finite())
        .map(|x| x.round().clamp(1.0, 5.0) as u8)
}

/// Pulls the outermost `{...}` object out of planner output, repairing the
/// missing comma after the `"problem"` entry that the prompt's own example omits.
fn extract_json_object(text: &str) -> Result<serde_json::Map<String, serde_json::Value>> {
    let start = text.find('{').ok_or_else(|| Error::parse("no JSON object found", text))?;
    let end = text.rfind('}').ok_or_else(|| Error::parse("no JSON object found", text))?;
    if end < start {
        return Err(Error::parse("no JSON object found", text));
    }
    let slice = &text[start..=end];
    if let Ok(map) = serde_json::from_str(slice) {
        return Ok(map);
    }
    static MISSING_COMMA: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r#"\}(\s*\n\s*)""#).expect("comma regex"));
    let repaired = MISSING_COMMA.replace_all(slice, "},$1\"");
    serde_json::from_str(&repaired).map_err(|e| Error::parse(format!("invalid JSON: {e}"), text))
}

/// Parses the difficulty/credit JSON for `m` sub-questions and repairs credits so
/// they sum to exactly 100.
pub fn parse_credits(text: &str, m: usize) -> Result<CreditAssessment> {
    if m == 0 {
        return Err(Error::domain("expected at least one sub-question"));
    }
    let map = extract_json_object(text)?;

    let problem_level = map
        .get("problem")
        .and_then(|v| v.get("evaluated_level"))
        .and_then(|v| clamp_level(Some(v)));

    let mut raw_credits = Vec::with_capacity(m);
    let mut levels = Vec::with_capacity(m);
    for j in 1..=m {
        let key = j.to_string();
        let value = map
            .get(&key)
            .ok_or_else(|| Error::parse(format!("missing entry \"{key}\""), text))?;
        let entry: RawEntry = serde_json::from_value(value.clone())
            .map_err(|e| Error::parse(format!("entry \"{key}\": {e}"), text))?;
        let credit = entry
            .credit
            .as_ref()
            .and_then(as_number)
            .ok_or_else(|| Error::parse(format!("entry \"{key}\" has no numeric credit"), text))?;
        if !(credit.is_finite() && credit > 0.0) {
            return Err(Error::parse(
                format!("entry \"{key}\" has nonpositive credit {credit}"),
                text,
            ));
        }
        raw_credits.push(credit);
        levels.push(clamp_level(entry.evaluated_level.as_ref()));
    }

    let credits = repair_credits(&raw_credits).map_err(|e| Error::parse(e.to_string(), text))?;
    Ok(CreditAssessment {
        credits,
        levels,
        problem_level,
    })
}

/// Integer credits summing to 100: unchanged when already valid, otherwise
/// rescaled proportionally and largest-remainder rounded (ties to lower index),
/// with every credit kept at least 1.
pub fn repair_credits(raw: &[f64]) -> Result<Vec<u64>> {
    let already_valid = raw.iter().all(|c| c.fract() == 0.0 && *c >= 1.0)
        && raw.iter().sum::<f64>() == 100.0;
    if already_valid {
        return Ok(raw.iter().map(|&c| c as u64).collect());
    }
    let sum: f64 = raw.iter().sum();
    if sum != 100.0 {
        warn!(sum, "planner credits do not sum to 100; rescaling");
    }
    let ones = vec![1.0; raw.len()];
    Ok(allocate(100, raw, &ones, 1)?.budgets)
}
