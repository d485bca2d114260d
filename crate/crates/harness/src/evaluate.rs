use std::process::Stdio;

use planbudget_core::metrics::{exact_match, rouge_l};
use planbudget_core::prompting::QueryRecord;
use serde_json::json;
use tokio::io::AsyncWriteExt;

use crate::config::{EvaluatorKind, ExperimentConfig};
use crate::error::{HarnessError, Result};

/// The answer part of a completion: whatever follows the last `</think>`.
pub fn final_answer(text: &str) -> &str {
    match text.rfind("</think>") {
        Some(i) => text[i + "</think>".len()..].trim(),
        None => text.trim(),
    }
}

/// Scores a prediction on the 0..=100 scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Evaluator {
    ExactMatch,
    /// ROUGE-L F1 times 100.
    RougeL,
    /// Program reading `{"id", "question", "gold", "reference", "prediction"}` on stdin
    /// and printing `1` (pass) or `0` (fail).
    External(Vec<String>),
}

impl Evaluator {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        match config.evaluator {
            EvaluatorKind::ExactMatch => Evaluator::ExactMatch,
            EvaluatorKind::RougeL => Evaluator::RougeL,
            EvaluatorKind::ExternalPassFail => Evaluator::External(config.pass_fail_command.clone()),
        }
    }

    pub async fn score(&self, record: &QueryRecord, prediction: &str) -> Result<f64> {
        match self {
            Evaluator::ExactMatch => Ok(exact_match(prediction, &record.gold)),
            Evaluator::RougeL => Ok(100.0 * rouge_l(prediction, &record.gold)),
            Evaluator::External(command) => run_external(command, record, prediction).await,
        }
    }
}

async fn run_external(command: &[String], record: &QueryRecord, prediction: &str) -> Result<f64> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| HarnessError::Evaluator("empty command".into()))?;
    let payload = json!({
        "id": record.id,
        "question": record.question,
        "gold": record.gold,
        "reference": record.reference,
        "prediction": prediction,
    })
    .to_string();

    let mut child = tokio::process::Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| HarnessError::Evaluator(format!("cannot start {program}: {e}")))?;
    if let Some(mut stdin) = child.stdin.take() {
        stdin
            .write_all(payload.as_bytes())
            .await
            .map_err(|e| HarnessError::Evaluator(format!("writing to {program}: {e}")))?;
    }
    let output = child
        .wait_with_output()
        .await
        .map_err(|e| HarnessError::Evaluator(format!("{program}: {e}")))?;
    if !output.status.success() {
        return Err(HarnessError::Evaluator(format!(
            "{program} exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    match String::from_utf8_lossy(&output.stdout).trim() {
        "1" => Ok(100.0),
        "0" => Ok(0.0),
        other => Err(HarnessError::Evaluator(format!(
            "{program} printed {other:?}, expected 0 or 1"
        ))),
    }
}
