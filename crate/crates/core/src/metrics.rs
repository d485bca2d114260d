//! Efficiency-aware evaluation: E3 = A^2 / T, accuracy per token, answer scoring
//! and multi-run aggregation.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_inputs(accuracy_pct: f64, avg_tokens: f64) -> Result<()> {
    if !(avg_tokens.is_finite() && avg_tokens > 0.0) {
        return Err(Error::domain(format!(
            "average tokens must be positive, got {avg_tokens}"
        )));
    }
    if !(0.0..=100.0).contains(&accuracy_pct) {
        return Err(Error::domain(format!(
            "accuracy must be a percentage in [0, 100], got {accuracy_pct}"
        )));
    }
    Ok(())
}

/// `A^2 / T` with `A` in percent.
pub fn e3(accuracy_pct: f64, avg_tokens: f64) -> Result<f64> {
    check_inputs(accuracy_pct, avg_tokens)?;
    Ok(accuracy_pct * accuracy_pct / avg_tokens)
}

/// `A / T * 100`, the scale used when reporting alongside E3.
pub fn a_over_t(accuracy_pct: f64, avg_tokens: f64) -> Result<f64> {
    check_inputs(accuracy_pct, avg_tokens)?;
    Ok(accuracy_pct / avg_tokens * 100.0)
}

/// Content of the last `\boxed{...}` with balanced braces, if any.
fn boxed_content(text: &str) -> Option<&str> {
    const MARKER: &str = "\\boxed{";
    let start = text.rfind(MARKER)? + MARKER.len();
    let mut depth = 1usize;
    for (i, ch) in text[start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Canonical form used by [`exact_match`].
pub fn normalize_answer(text: &str) -> String {
    let inner = boxed_content(text).unwrap_or(text);
    let mut out = inner.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let trimmed = out.trim_end_matches('.').trim_end();
        if trimmed.len() == out.len() {
            break;
        }
        out = trimmed.to_string();
    }
    out
}

/// 100 when the normalized prediction equals the normalized gold answer, else 0.
pub fn exact_match(prediction: &str, gold: &str) -> f64 {
    if normalize_answer(prediction) == normalize_answer(gold) {
        100.0
    } else {
        0.0
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// ROUGE-L F1 over lowercased whitespace tokens.
pub fn rouge_l(prediction: &str, reference: &str) -> f64 {
    let hyp = tokenize(prediction);
    let refs = tokenize(reference);
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&hyp, &refs);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / hyp.len() as f64;
    let r = lcs as f64 / refs.len() as f64;
    2.0 * p * r / (p + r)
}

/// Score and billed tokens for one (query, run) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub query_id: String,
    pub run_index: u32,
    /// Percent in [0, 100].
    pub score: f64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub score_mean: f64,
    pub score_std: f64,
    pub tokens_mean: f64,
    pub tokens_std: f64,
    pub e3: f64,
    pub a_over_t: f64,
    pub n_runs: u32,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for a single value.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Per-run means over queries, then mean and sample std over runs.
pub fn aggregate(outcomes: &[RunOutcome], n_runs: u32) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::domain("cannot aggregate an empty outcome set"));
    }
    if n_runs == 0 {
        return Err(Error::domain("n_runs must be at least 1"));
    }

    let mut sorted: Vec<&RunOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| {
        a.query_id
            .cmp(&b.query_id)
            .then(a.run_index.cmp(&b.run_index))
    });
    for pair in sorted.windows(2) {
        if pair[0].query_id == pair[1].query_id && pair[0].run_index == pair[1].run_index {
            return Err(Error::domain(format!(
                "duplicate outcome for query {} run {}",
                pair[0].query_id, pair[0].run_index
            )));
        }
    }

    let mut by_run: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for o in sorted {
        if o.run_index >= n_runs {
            return Err(Error::domain(format!(
                "outcome run index {} outside [0, {n_runs})",
                o.run_index
            )));
        }
        if !(0.0..=100.0).contains(&o.score) {
            return Err(Error::domain(format!("score {} outside [0, 100]", o.score)));
        }
        let entry = by_run.entry(o.run_index).or_default();
        entry.0.push(o.score);
        entry.1.push(o.completion_tokens as f64);
    }
    if by_run.len() != n_runs as usize {
        return Err(Error::domain(format!(
            "expected outcomes for {n_runs} runs, found {}",
            by_run.len()
        )));
    }

    let run_scores: Vec<f64> = by_run.values().map(|(s, _)| mean(s)).collect();
    let run_tokens: Vec<f64> = by_run.values().map(|(_, t)| mean(t)).collect();
    let score_mean = mean(&run_scores);
    let tokens_mean = mean(&run_tokens);
    Ok(EvalReport {
        score_mean,
        score_std: sample_std(&run_scores),
        tokens_mean,
        tokens_std: sample_std(&run_tokens),
        e3: e3(score_mean, tokens_mean)?,
        a_over_t: a_over_t(score_mean, tokens_mean)?,
        n_runs,
    })
}

/// One labeled line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub model: String,
    pub dataset: String,
    pub score_mean: f64,
    pub score_std: f64,
    pub tokens_mean: f64,
    pub tokens_std: f64,
    pub e3: f64,
    pub a_over_t: f64,
    pub n_runs: u32,
}

impl ReportRow {
    pub fn new(
        method: impl Into<String>,
        model: impl Into<String>,
        dataset: impl Into<String>,
        report: &EvalReport,
    ) -> Self {
        Self {
            method: method.into(),
            model: model.into(),
            dataset: dataset.into(),
            score_mean: report.score_mean,
            score_std: report.score_std,
            tokens_mean: report.tokens_mean,
            tokens_std: report.tokens_std,
            e3: report.e3,
            a_over_t: report.a_over_t,
            n_runs: report.n_runs,
        }
    }
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

pub fn report_json(rows: &[ReportRow]) -> serde_json::Result<String> {
    serde_json::to_string_pretty(rows)
}
