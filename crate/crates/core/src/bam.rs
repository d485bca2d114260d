//! Budget allocation model.
//!
//! Each sub-question `j` yields utility `alpha * (1 - c_j / b_j^beta_j - aleatoric_j)`
//! when given `b_j` tokens. Maximizing total utility under `sum b_j = B` reduces to
//! minimizing `sum c_j / b_j^beta_j`; stationarity gives `lambda = c_j beta_j b_j^-(beta_j+1)`
//! for a common multiplier `lambda`.
//!
//! Two allocators are provided. [`allocate_closed_form`] normalizes the per-item
//! numerators `(c_j beta_j)^(1/(beta_j+1))` so they sum to `B`. That is the exact
//! optimum only when every `beta_j` is the same; with mixed exponents it is merely
//! feasible. [`allocate_kkt`] solves for `lambda` numerically and returns the true
//! constrained optimum in every case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for [`allocate_kkt`].
pub const DEFAULT_TOL: f64 = 1e-9;

/// Bisection iteration cap for the multiplier search.
pub const MAX_BISECTION_ITERS: usize = 200;

const MAX_BRACKET_STEPS: usize = 4096;

/// Utility parameters for a single sub-question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub c: f64,
    pub beta: f64,
    #[serde(default)]
    pub aleatoric: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl UtilityParams {
    pub fn new(alpha: f64, c: f64, beta: f64, aleatoric: f64) -> Result<Self> {
        let params = Self {
            alpha,
            c,
            beta,
            aleatoric,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters with `alpha = 1` and no aleatoric offset.
    pub fn with_cost(c: f64, beta: f64) -> Result<Self> {
        Self::new(1.0, c, beta, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::domain(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::domain(format!("c must be positive, got {}", self.c)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::domain(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.aleatoric.is_finite() && self.aleatoric >= 0.0) {
            return Err(Error::domain(format!(
                "aleatoric must be nonnegative, got {}",
                self.aleatoric
            )));
        }
        Ok(())
    }

    /// `c * beta`, the stationarity numerator.
    fn marginal_scale(&self) -> f64 {
        self.c * self.beta
    }

    /// Residual epistemic term `c / b^beta`.
    pub fn epistemic_cost(&self, budget: f64) -> f64 {
        self.c / budget.powf(self.beta)
    }

    /// Marginal utility reduction rate `c beta b^-(beta+1)`; equals lambda at the optimum.
    pub fn marginal_gain(&self, budget: f64) -> f64 {
        self.marginal_scale() * budget.powf(-(self.beta + 1.0))
    }
}

/// Utility of spending `budget` tokens on a sub-question.
pub fn utility(params: &UtilityParams, budget: f64) -> Result<f64> {
    params.validate()?;
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::domain(format!("budget must be positive, got {budget}")));
    }
    Ok(params.alpha * (1.0 - params.epistemic_cost(budget) - params.aleatoric))
}

/// A query-level budget and the sub-questions competing for it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationInstance {
    total_budget: f64,
    items: Vec<UtilityParams>,
}

impl AllocationInstance {
    pub fn new(total_budget: f64, items: Vec<UtilityParams>) -> Result<Self> {
        if !(total_budget.is_finite() && total_budget > 0.0) {
            return Err(Error::domain(format!(
                "total budget must be positive, got {total_budget}"
            )));
        }
        if items.is_empty() {
            return Err(Error::domain("allocation instance needs at least one item"));
        }
        for item in &items {
            item.validate()?;
        }
        Ok(Self {
            total_budget,
            items,
        })
    }

    /// Convenience constructor from parallel `c` and `beta` slices.
    pub fn from_costs(total_budget: f64, c: &[f64], beta: &[f64]) -> Result<Self> {
        if c.len() != beta.len() {
            return Err(Error::domain(format!(
                "c has {} entries but beta has {}",
                c.len(),
                beta.len()
            )));
        }
        let items = c
            .iter()
            .zip(beta)
            .map(|(&c, &b)| UtilityParams::with_cost(c, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(total_budget, items)
    }

    pub fn total_budget(&self) -> f64 {
        self.total_budget
    }

    pub fn items(&self) -> &[UtilityParams] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `sum c_j / b_j^beta_j` for an arbitrary budget vector.
    pub fn objective(&self, budgets: &[f64]) -> f64 {
        self.items
            .iter()
            .zip(budgets)
            .map(|(item, &b)| item.epistemic_cost(b))
            .sum()
    }

    /// Total utility for an arbitrary budget vector.
    pub fn total_utility(&self, budgets: &[f64]) -> Result<f64> {
        self.items
            .iter()
            .zip(budgets)
            .map(|(item, &b)| utility(item, b))
            .sum()
    }

    /// Budgets implied by a multiplier: `b_j(lambda) = (c_j beta_j / lambda)^(1/(beta_j+1))`.
    pub fn budgets_at(&self, lambda: f64) -> Vec<f64> {
        self.items
            .iter()
            .map(|item| (item.marginal_scale() / lambda).powf(1.0 / (item.beta + 1.0)))
            .collect()
    }

    fn spend_at(&self, lambda: f64) -> f64 {
        self.budgets_at(lambda).iter().sum()
    }
}

/// JSON shape accepted by the `bam` debug command.
#[derive(Debug, Clone, Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "B")]
    pub total_budget: f64,
    pub items: Vec<UtilityParams>,
}

impl TryFrom<InstanceFile> for AllocationInstance {
    type Error = Error;

    fn try_from(file: InstanceFile) -> Result<Self> {
        AllocationInstance::new(file.total_budget, file.items)
    }
}

/// Normalized allocation `b_j = B * a_j / sum_k a_k` with `a_j = (c_j beta_j)^(1/(beta_j+1))`.
pub fn allocate_closed_form(instance: &AllocationInstance) -> Vec<f64> {
    let total = instance.total_budget;
    if instance.len() == 1 {
        return vec![total];
    }
    let numerators: Vec<f64> = instance
        .items
        .iter()
        .map(|item| item.marginal_scale().powf(1.0 / (item.beta + 1.0)))
        .collect();
    let denom: f64 = numerators.iter().sum();
    numerators.iter().map(|a| total * a / denom).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagrangeSolution {
    pub budgets: Vec<f64>,
    pub lambda: f64,
    /// `sum c_j / b_j^beta_j` at the returned budgets.
    pub objective: f64,
    /// `(max - min) / max` of the per-item marginal gains.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Relative spread of the marginal gains across items; zero at an exact stationary point.
pub fn kkt_spread(instance: &AllocationInstance, budgets: &[f64]) -> f64 {
    let gains: Vec<f64> = instance
        .items
        .iter()
        .zip(budgets)
        .map(|(item, &b)| item.marginal_gain(b))
        .collect();
    let max = gains.iter().cloned().fold(f64::MIN, f64::max);
    let min = gains.iter().cloned().fold(f64::MAX, f64::min);
    if max <= 0.0 {
        return 0.0;
    }
    (max - min) / max
}

/// Solves the constrained problem by bisection on the multiplier.
///
/// Total spend `S(lambda)` is strictly decreasing, so the root of `S(lambda) = B` is
/// bracketed by doubling or halving from `lambda = 1` and then bisected until
/// `|S - B| <= tol * B`.
pub fn allocate_kkt(instance: &AllocationInstance, tol: f64) -> Result<LagrangeSolution> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    let total = instance.total_budget;

    if instance.len() == 1 {
        let item = &instance.items[0];
        return Ok(LagrangeSolution {
            budgets: vec![total],
            lambda: item.marginal_gain(total),
            objective: item.epistemic_cost(total),
            kkt_residual: 0.0,
            iterations: 0,
        });
    }

    let (mut lo, mut hi) = bracket(instance)?;
    let mut iterations = 0;
    let mut lambda = 0.5 * (lo + hi);
    let mut residual = f64::INFINITY;

    while iterations < MAX_BISECTION_ITERS {
        iterations += 1;
        lambda = 0.5 * (lo + hi);
        let spend = instance.spend_at(lambda);
        residual = (spend - total).abs() / total;
        if residual <= tol {
            break;
        }
        if spend > total {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi <= lo {
            break;
        }
    }

    if residual > tol {
        return Err(Error::Solver {
            iterations,
            residual,
        });
    }

    let budgets = instance.budgets_at(lambda);
    let kkt_residual = kkt_spread(instance, &budgets);
    Ok(LagrangeSolution {
        objective: instance.objective(&budgets),
        budgets,
        lambda,
        kkt_residual,
        iterations,
    })
}

/// Finds `lo < hi` with `S(lo) >= B >= S(hi)`.
fn bracket(instance: &AllocationInstance) -> Result<(f64, f64)> {
    let total = instance.total_budget;
    let mut lambda = 1.0_f64;
    let mut steps = 0;
    if instance.spend_at(lambda) > total {
        // spend too high: raise lambda
        while instance.spend_at(lambda) > total {
            lambda *= 2.0;
            steps += 1;
            if steps > MAX_BRACKET_STEPS || !lambda.is_finite() {
                return Err(bracket_failure(instance, lambda, steps));
            }
        }
        Ok((lambda / 2.0, lambda))
    } else {
        while instance.spend_at(lambda) < total {
            lambda /= 2.0;
            steps += 1;
            if steps > MAX_BRACKET_STEPS || lambda == 0.0 {
                return Err(bracket_failure(instance, lambda, steps));
            }
        }
        Ok((lambda, lambda * 2.0))
    }
}

fn bracket_failure(instance: &AllocationInstance, lambda: f64, steps: usize) -> Error {
    let spend = instance.spend_at(lambda);
    Error::Solver {
        iterations: steps,
        residual: (spend - instance.total_budget).abs() / instance.total_budget,
    }
}

/// Result of scanning `f(beta) = (beta c)^(1/(beta+1))` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnimodalScan {
    /// Location of the grid maximum (interior when one exists).
    pub beta_star: f64,
    pub f_star: f64,
    /// True iff the sign of successive differences changes at most once, from + to -.
    pub is_unimodal: bool,
    /// Number of strict interior local maxima found on the grid.
    pub interior_maxima: usize,
    pub grid_points: usize,
}

/// Allocation kernel `f(beta) = (beta c)^(1/(beta+1))`.
pub fn allocation_kernel(c: f64, beta: f64) -> f64 {
    (beta * c).powf(1.0 / (beta + 1.0))
}

/// Grid scan of the allocation kernel over `[lo, hi]`.
pub fn unimodal_argmax(c: f64, lo: f64, hi: f64, grid_step: f64) -> Result<UnimodalScan> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::domain(format!("c must be positive, got {c}")));
    }
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::domain(format!("need 0 < lo < hi, got [{lo}, {hi}]")));
    }
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::domain(format!("grid step must be positive, got {grid_step}")));
    }
    let n = ((hi - lo) / grid_step + 1e-9).floor() as usize + 1;
    if n < 3 {
        return Err(Error::domain(format!(
            "range [{lo}, {hi}] with step {grid_step} gives {n} grid points, need at least 3"
        )));
    }

    let grid: Vec<f64> = (0..n).map(|i| lo + i as f64 * grid_step).collect();
    let values: Vec<f64> = grid.iter().map(|&b| allocation_kernel(c, b)).collect();

    let signs: Vec<i8> = values
        .windows(2)
        .map(|w| match w[1].partial_cmp(&w[0]) {
            Some(std::cmp::Ordering::Greater) => 1,
            Some(std::cmp::Ordering::Less) => -1,
            _ => 0,
        })
        .filter(|&s| s != 0)
        .collect();
    let changes: Vec<(i8, i8)> = signs
        .windows(2)
        .filter(|w| w[0] != w[1])
        .map(|w| (w[0], w[1]))
        .collect();
    let is_unimodal = matches!(changes.as_slice(), [] | [(1, -1)]);

    let interior_maxima = (1..n - 1)
        .filter(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
        .count();

    let (best, f_star) = values
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });

    Ok(UnimodalScan {
        beta_star: grid[best],
        f_star,
        is_unimodal,
        interior_maxima,
        grid_points: n,
    })
}
