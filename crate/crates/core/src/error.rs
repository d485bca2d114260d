use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violated a precondition of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested integer allocation cannot satisfy its per-item floor.
    #[error("infeasible allocation: {items} items x min {min_budget} exceeds total {total}")]
    Infeasible {
        items: usize,
        min_budget: u64,
        total: u64,
    },

    /// The multiplier search stopped before meeting its tolerance.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    /// Planner output could not be turned into a structured value.
    #[error("parse error: {reason}")]
    Parse { reason: String, raw: String },

    /// A prompt was requested without one of the inputs its template needs.
    #[error("missing required input for placeholder {0}")]
    MissingInput(&'static str),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(reason: impl Into<String>, raw: impl Into<String>) -> Self {
        Error::Parse {
            reason: reason.into(),
            raw: raw.into(),
        }
    }
}
