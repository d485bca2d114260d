//! Core computations for budgeted LLM reasoning: optimal and decay-based token
//! allocation, uncertainty decomposition, efficiency metrics, and the prompt
//! templates that carry per-step budgets to the model.

pub mod bam;
pub mod error;
pub mod metrics;
pub mod prompting;
pub mod scheduling;
pub mod uncertainty;

pub use error::{Error, Result};
