//! Text-generation backends behind one async interface: an OpenAI-compatible
//! chat-completions client and a deterministic scripted mock, both wrapped by a
//! [`Gateway`] that retries transient failures and counts billed tokens.

pub mod config;
pub mod error;
pub mod gateway;
pub mod mock;
pub mod openai;
pub mod types;

pub use config::{BackendKind, GatewayConfig};
pub use error::GatewayError;
pub use gateway::{Backend, Gateway, RetryPolicy};
pub use mock::{MockBackend, MockOutcome, MockRule, MockScript, TranscriptEntry};
pub use openai::OpenAiBackend;
pub use types::{FinishReason, GenerationRequest, GenerationResponse, Message, Role};
