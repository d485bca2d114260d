//! Decay-based budget scheduling.
//!
//! A query budget `B` is split across `m` sub-questions in proportion to
//! `w_j * rho_j`, where `w_j` are normalized complexity scores and `rho_j` is a
//! positional decay prior indexed from `j = 0`. Real shares are rounded down and
//! the remainder goes to the largest fractional parts, so the integer budgets
//! always sum to `B`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planner-assigned complexity scores, one per sub-question.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityScores(Vec<f64>);

impl ComplexityScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        validate_scores(&scores)?;
        Ok(Self(scores))
    }

    /// Equal scores for `m` sub-questions.
    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(vec![1.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        let total: f64 = self.0.iter().sum();
        self.0.iter().map(|d| d / total).collect()
    }
}

fn validate_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::domain("complexity scores must be nonempty"));
    }
    if let Some((i, d)) = scores
        .iter()
        .enumerate()
        .find(|(_, d)| !(d.is_finite() && **d > 0.0))
    {
        return Err(Error::domain(format!("score {i} must be positive, got {d}")));
    }
    Ok(())
}

/// `w_j = d_j / sum_k d_k`.
pub fn normalize_weights(scores: &[f64]) -> Result<Vec<f64>> {
    validate_scores(scores)?;
    let total: f64 = scores.iter().sum();
    Ok(scores.iter().map(|d| d / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Equal split; ignores scores.
    Uniform,
    /// Proportional to scores, no decay.
    Weighted,
    Linear,
    Polynomial,
    Exponential,
    Cosine,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 6] = [
        ScheduleKind::Uniform,
        ScheduleKind::Weighted,
        ScheduleKind::Linear,
        ScheduleKind::Polynomial,
        ScheduleKind::Exponential,
        ScheduleKind::Cosine,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScheduleKind::Uniform => "uniform",
            ScheduleKind::Weighted => "weighted",
            ScheduleKind::Linear => "linear",
            ScheduleKind::Polynomial => "polynomial",
            ScheduleKind::Exponential => "exponential",
            ScheduleKind::Cosine => "cosine",
        }
    }

    pub fn is_decay(&self) -> bool {
        !matches!(self, ScheduleKind::Uniform | ScheduleKind::Weighted)
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::domain(format!("unknown schedule kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub kind: ScheduleKind,
    /// Polynomial exponent.
    pub p: f64,
    /// Exponential base, in (0, 1).
    pub gamma: f64,
    /// Cosine floor.
    pub epsilon: f64,
    /// Per-sub-question floor applied after rounding.
    pub min_budget: u64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Uniform,
            p: 2.0,
            gamma: 0.9,
            epsilon: 0.01,
            min_budget: 1,
        }
    }
}

impl ScheduleParams {
    pub fn with_kind(kind: ScheduleKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::domain(format!("p must be positive, got {}", self.p)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::domain(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::domain(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Positional prior `rho_j` for `j = 0..m`.
pub fn decay_prior(params: &ScheduleParams, m: usize) -> Result<Vec<f64>> {
    params.validate()?;
    if m == 0 {
        return Err(Error::domain("decay prior needs m >= 1"));
    }
    let mf = m as f64;
    let prior = (0..m)
        .map(|j| {
            let jf = j as f64;
            match params.kind {
                ScheduleKind::Uniform | ScheduleKind::Weighted => 1.0,
                ScheduleKind::Linear => mf - jf,
                ScheduleKind::Polynomial => (mf - jf).powf(params.p),
                ScheduleKind::Exponential => params.gamma.powf(jf),
                ScheduleKind::Cosine if m == 1 => 1.0,
                ScheduleKind::Cosine => {
                    0.5 * (1.0 + (PI * jf / (mf - 1.0)).cos()) + params.epsilon
                }
            }
        })
        .collect();
    Ok(prior)
}

/// Integer budgets for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub budgets: Vec<u64>,
    pub total: u64,
}

impl BudgetAllocation {
    pub fn len(&self) -> usize {
        self.budgets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.budgets.is_empty()
    }
}

/// Real shares `r_j = B * w_j rho_j / sum_k w_k rho_k`.
pub fn real_shares(total: u64, weights: &[f64], prior: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::domain("allocation needs at least one sub-question"));
    }
    if weights.len() != prior.len() {
        return Err(Error::domain(format!(
            "{} weights but {} prior values",
            weights.len(),
            prior.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::domain("weights must be finite and nonnegative"));
    }
    if prior.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::domain("prior values must be finite and positive"));
    }
    let products: Vec<f64> = weights.iter().zip(prior).map(|(w, r)| w * r).collect();
    let denom: f64 = products.iter().sum();
    if denom <= 0.0 {
        return Err(Error::domain("weights times prior sum to zero"));
    }
    let b = total as f64;
    Ok(products.iter().map(|x| b * x / denom).collect())
}

/// Floors each share and hands the remaining units to the largest fractional
/// parts, lower index first on ties. Shares must sum to `total` up to rounding.
pub fn largest_remainder(shares: &[f64], total: u64) -> Vec<u64> {
    let mut budgets: Vec<u64> = shares.iter().map(|s| s.max(0.0).floor() as u64).collect();
    let assigned: u64 = budgets.iter().sum();
    let mut remainder = total.saturating_sub(assigned) as usize;

    let mut order: Vec<usize> = (0..shares.len()).collect();
    // stable sort keeps lower indices first among equal fractions
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
    });
    let m = order.len();
    let mut k = 0;
    while remainder > 0 && m > 0 {
        budgets[order[k % m]] += 1;
        remainder -= 1;
        k += 1;
    }

    // float drift can push floors one unit over
    let mut excess = budgets.iter().sum::<u64>().saturating_sub(total);
    while excess > 0 {
        let i = index_of_max(&budgets);
        budgets[i] -= 1;
        excess -= 1;
    }
    budgets
}

fn index_of_max(values: &[u64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, 0u64), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0
}

/// Raises items below `min_budget`, taking each unit from the currently largest item.
fn enforce_floor(budgets: &mut [u64], min_budget: u64) {
    while let Some(i) = budgets.iter().position(|&b| b < min_budget) {
        budgets[i] += 1;
        let j = index_of_max(budgets);
        budgets[j] -= 1;
    }
}

/// Integer allocation of `total` in proportion to `weights * prior`.
pub fn allocate(
    total: u64,
    weights: &[f64],
    prior: &[f64],
    min_budget: u64,
) -> Result<BudgetAllocation> {
    let m = weights.len();
    if (m as u64).saturating_mul(min_budget) > total {
        return Err(Error::Infeasible {
            items: m,
            min_budget,
            total,
        });
    }
    let shares = real_shares(total, weights, prior)?;
    let mut budgets = largest_remainder(&shares, total);
    enforce_floor(&mut budgets, min_budget);
    debug_assert_eq!(budgets.iter().sum::<u64>(), total);
    Ok(BudgetAllocation { budgets, total })
}

/// Weights and prior for a schedule, before any rounding.
pub fn schedule_inputs(
    scores: &ComplexityScores,
    params: &ScheduleParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = scores.len();
    let weights = match params.kind {
        ScheduleKind::Uniform => vec![1.0 / m as f64; m],
        _ => scores.weights(),
    };
    let prior = decay_prior(params, m)?;
    Ok((weights, prior))
}

pub fn schedule_and_allocate(
    scores: &ComplexityScores,
    params: &ScheduleParams,
    total: u64,
) -> Result<BudgetAllocation> {
    let (weights, prior) = schedule_inputs(scores, params)?;
    allocate(total, &weights, &prior, params.min_budget)
}

/// JSON shape accepted by the `allocate` debug command.
#[derive(Debug, Clone, Deserialize)]
pub struct AllocationRequest {
    #[serde(rename = "B")]
    pub total: u64,
    pub scores: Vec<f64>,
    pub kind: ScheduleKind,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_min_budget")]
    pub min_budget: u64,
}

fn default_p() -> f64 {
    ScheduleParams::default().p
}
fn default_gamma() -> f64 {
    ScheduleParams::default().gamma
}
fn default_epsilon() -> f64 {
    ScheduleParams::default().epsilon
}
fn default_min_budget() -> u64 {
    ScheduleParams::default().min_budget
}

impl AllocationRequest {
    pub fn params(&self) -> ScheduleParams {
        ScheduleParams {
            kind: self.kind,
            p: self.p,
            gamma: self.gamma,
            epsilon: self.epsilon,
            min_budget: self.min_budget,
        }
    }

    pub fn run(&self) -> Result<BudgetAllocation> {
        let scores = ComplexityScores::new(self.scores.clone())?;
        schedule_and_allocate(&scores, &self.params(), self.total)
    }
}
