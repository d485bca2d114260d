//! Recomputes E³ and A/T for rows transcribed from published result tables.

use std::fmt::Write as _;
use std::path::Path;

use planbudget_core::metrics::{a_over_t, e3};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Allowed gap between a recomputed (then 2-d.p. rounded) value and the printed one.
pub const TABLE_TOLERANCE: f64 = 0.02;

/// Rows from the three main result tables, with A/T where the comparison tables agree.
pub const PUBLISHED_RESULTS: &str = include_str!("../fixtures/published_results.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub dataset: String,
    #[serde(default)]
    pub section: String,
    #[serde(default)]
    pub method: String,
    #[serde(default)]
    pub model: String,
    pub score: f64,
    pub tokens: f64,
    pub e3: f64,
    #[serde(default)]
    pub a_over_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowCheck {
    pub row: FixtureRow,
    pub e3: f64,
    pub e3_deviation: f64,
    pub a_over_t: Option<f64>,
    pub a_over_t_deviation: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableCheck {
    pub rows: Vec<RowCheck>,
    pub tolerance: f64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn deviation(recomputed: f64, printed: f64) -> f64 {
    (round2(recomputed) - printed).abs()
}

fn within(dev: f64, tol: f64) -> bool {
    // printed values are decimal, so allow for binary representation error
    dev <= tol + 1e-9
}

impl TableCheck {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RowCheck> {
        self.rows.iter().filter(|r| !r.passed)
    }

    /// One line per row, then a summary line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let at = match (r.a_over_t, r.row.a_over_t) {
                (Some(v), Some(p)) => format!(" a/t {v:.2} vs {p} (dev {:.3})", r.a_over_t_deviation.unwrap_or(0.0)),
                _ => String::new(),
            };
            let _ = writeln!(
                out,
                "{} {}/{}/{}/{}: e3 {:.2} vs {} (dev {:.3}){at}",
                if r.passed { "ok  " } else { "FAIL" },
                r.row.dataset,
                r.row.section,
                r.row.method,
                r.row.model,
                r.e3,
                r.row.e3,
                r.e3_deviation,
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(
            out,
            "{} of {} rows within ±{}",
            self.rows.len() - failed,
            self.rows.len(),
            self.tolerance
        );
        out
    }
}

pub fn check_rows(rows: Vec<FixtureRow>, tolerance: f64) -> Result<TableCheck> {
    let mut checks = Vec::with_capacity(rows.len());
    for row in rows {
        let value = e3(row.score, row.tokens)?;
        let e3_deviation = deviation(value, row.e3);
        let at = row.a_over_t.map(|_| a_over_t(row.score, row.tokens)).transpose()?;
        let at_deviation = at.zip(row.a_over_t).map(|(v, p)| deviation(v, p));
        let passed = within(e3_deviation, tolerance) && at_deviation.is_none_or(|d| within(d, tolerance));
        checks.push(RowCheck {
            row,
            e3: value,
            e3_deviation,
            a_over_t: at,
            a_over_t_deviation: at_deviation,
            passed,
        });
    }
    Ok(TableCheck {
        rows: checks,
        tolerance,
    })
}

pub fn parse_fixture(text: &str) -> Result<Vec<FixtureRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<FixtureRow>, _>>()
        .map_err(|e| HarnessError::Fixture(e.to_string()))?;
    if rows.is_empty() {
        return Err(HarnessError::Fixture("fixture has no rows".into()));
    }
    Ok(rows)
}

pub fn verify_tables(fixture_path: &Path) -> Result<TableCheck> {
    let text = std::fs::read_to_string(fixture_path).map_err(|e| HarnessError::io(fixture_path, e))?;
    check_rows(parse_fixture(&text)?, TABLE_TOLERANCE)
}
