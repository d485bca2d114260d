use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    /// A failure worth retrying: 429, 5xx, timeouts, dropped connections.
    #[error("transient backend failure{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transient { status: Option<u16>, message: String },

    /// Retries were exhausted on transient failures.
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    /// The backend answered but the body was not understood.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Non-retryable 4xx.
    #[error("request rejected with HTTP {status}: {body}")]
    Request { status: u16, body: String },

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("mock script exhausted at request {request_id}")]
    ScriptExhausted { request_id: String },

    #[error("configuration error: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transient { .. })
    }

    /// Classifies an HTTP status that is not a success.
    pub fn from_status(status: u16, body: String) -> Self {
        if status == 429 || (500..600).contains(&status) {
            GatewayError::Transient {
                status: Some(status),
                message: body,
            }
        } else {
            GatewayError::Request { status, body }
        }
    }
}
