//! JSONL datasets: one `{"id", "question", "answer", "level"?, "reference"?, "domain"?}` per line.

use std::collections::HashSet;
use std::path::Path;

use planbudget_core::prompting::QueryRecord;
use serde::Deserialize;

use crate::error::{HarnessError, Result};

#[derive(Debug, Deserialize)]
struct Line {
    id: String,
    question: String,
    answer: String,
    #[serde(default)]
    level: Option<i64>,
    #[serde(default)]
    reference: Option<String>,
    #[serde(default)]
    domain: Option<String>,
}

/// Parses every line before returning, so all problems are reported at once.
pub fn parse_dataset(text: &str, path: &Path, default_level: u8, default_domain: &str) -> Result<Vec<QueryRecord>> {
    let mut records = Vec::new();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = match serde_json::from_str(raw) {
            Ok(line) => line,
            Err(e) => {
                problems.push(format!("line {lineno}: {e}"));
                continue;
            }
        };
        if line.id.trim().is_empty() {
            problems.push(format!("line {lineno}: empty id"));
            continue;
        }
        if !seen.insert(line.id.clone()) {
            problems.push(format!("line {lineno}: duplicate id {:?}", line.id));
            continue;
        }
        if line.question.trim().is_empty() {
            problems.push(format!("line {lineno}: empty question"));
            continue;
        }
        let level = match line.level {
            None => default_level,
            Some(l) if (1..=5).contains(&l) => l as u8,
            Some(l) => {
                problems.push(format!("line {lineno}: level {l} is outside 1..=5"));
                continue;
            }
        };
        records.push(QueryRecord {
            id: line.id,
            question: line.question,
            gold: line.answer,
            level: Some(level),
            reference: line.reference,
            domain: line.domain.unwrap_or_else(|| default_domain.to_string()),
        });
    }

    if records.is_empty() && problems.is_empty() {
        problems.push("no records".into());
    }
    if !problems.is_empty() {
        return Err(HarnessError::Dataset {
            path: path.to_path_buf(),
            problems,
        });
    }
    Ok(records)
}

pub fn load_dataset(path: &Path, default_level: u8, default_domain: &str) -> Result<Vec<QueryRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_dataset(&text, path, default_level, default_domain)
}
