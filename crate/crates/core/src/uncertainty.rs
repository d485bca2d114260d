//! Total / aleatoric / epistemic decomposition for an ensemble of categorical
//! predictive distributions.
//!
//! With member predictions `p_1..p_M` over `K` outcomes:
//! total is `H[mean_m p_m]`, aleatoric is `mean_m H[p_m]`, and epistemic is their
//! difference (the mutual information between outcome and member). This is an
//! offline analysis tool; nothing on the inference path samples ensembles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    #[serde(alias = "natural")]
    Nats,
    Bits,
}

impl LogBase {
    fn scale(&self, nats: f64) -> f64 {
        match self {
            LogBase::Nats => nats,
            LogBase::Bits => nats / std::f64::consts::LN_2,
        }
    }

    /// `log K` in this base.
    pub fn max_entropy(&self, outcomes: usize) -> f64 {
        self.scale((outcomes as f64).ln())
    }
}

fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::domain("distribution must have at least one outcome"));
    }
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::domain("probabilities must be finite and nonnegative"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::domain(format!("probabilities sum to {sum}, expected 1")));
    }
    Ok(())
}

fn entropy_nats(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Shannon entropy with `0 log 0 = 0`.
pub fn entropy(p: &[f64], base: LogBase) -> Result<f64> {
    validate_distribution(p)?;
    Ok(base.scale(entropy_nats(p)).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveEnsemble {
    members: Vec<Vec<f64>>,
    #[serde(default)]
    base: LogBase,
}

impl PredictiveEnsemble {
    pub fn new(members: Vec<Vec<f64>>, base: LogBase) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::domain("ensemble needs at least one member"));
        };
        let k = first.len();
        for (i, member) in members.iter().enumerate() {
            if member.len() != k {
                return Err(Error::domain(format!(
                    "member {i} has {} outcomes, expected {k}",
                    member.len()
                )));
            }
            validate_distribution(member)
                .map_err(|e| Error::domain(format!("member {i}: {e}")))?;
        }
        Ok(Self { members, base })
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }

    pub fn base(&self) -> LogBase {
        self.base
    }

    pub fn outcomes(&self) -> usize {
        self.members[0].len()
    }

    /// Uniform mixture `(1/M) sum_m p_m`.
    pub fn mixture(&self) -> Vec<f64> {
        let m = self.members.len() as f64;
        let mut mix = vec![0.0; self.outcomes()];
        for member in &self.members {
            for (acc, p) in mix.iter_mut().zip(member) {
                *acc += p;
            }
        }
        mix.iter_mut().for_each(|x| *x /= m);
        mix
    }
}

/// JSON shape accepted by the `uq` debug command.
#[derive(Debug, Clone, Deserialize)]
pub struct EnsembleFile {
    pub members: Vec<Vec<f64>>,
    #[serde(default)]
    pub base: LogBase,
}

impl TryFrom<EnsembleFile> for PredictiveEnsemble {
    type Error = Error;

    fn try_from(file: EnsembleFile) -> Result<Self> {
        PredictiveEnsemble::new(file.members, file.base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

pub fn decompose(ensemble: &PredictiveEnsemble) -> UncertaintyReport {
    let base = ensemble.base;
    let total = base.scale(entropy_nats(&ensemble.mixture())).max(0.0);
    let aleatoric = ensemble
        .members
        .iter()
        .map(|p| base.scale(entropy_nats(p)).max(0.0))
        .sum::<f64>()
        / ensemble.members.len() as f64;
    let epistemic = total - aleatoric;
    // re-add so that total == aleatoric + epistemic holds bit-for-bit
    UncertaintyReport {
        total: aleatoric + epistemic,
        aleatoric,
        epistemic,
    }
}
