use serde::{Deserialize, Serialize};

use crate::error::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model: String,
    pub messages: Vec<Message>,
    /// Hard cutoff on generated tokens.
    pub max_tokens: Option<u32>,
    pub temperature: Option<f64>,
    /// Caller-chosen identifier, used for tracing and mock matching. Never sent on the wire.
    pub request_id: String,
}

impl GenerationRequest {
    /// Single user-turn request.
    pub fn user(model: impl Into<String>, request_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            messages: vec![Message::user(prompt)],
            max_tokens: None,
            temperature: None,
            request_id: request_id.into(),
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = Some(max_tokens);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("request has no messages".into()));
        }
        if self.max_tokens == Some(0) {
            return Err(GatewayError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return Err(GatewayError::InvalidRequest(format!("invalid temperature {t}")));
            }
        }
        Ok(())
    }

    /// All message contents joined by blank lines.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    #[default]
    Stop,
    /// Generation hit `max_tokens`.
    Length,
    Error,
}

impl FinishReason {
    pub fn from_wire(value: Option<&str>) -> Self {
        match value {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some("content_filter") => FinishReason::Error,
            Some(_) => FinishReason::Stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    /// Billed completion tokens; includes reasoning tokens when the provider reports them as a sum.
    pub completion_tokens: u64,
    /// Zero when the backend does not report them.
    pub reasoning_tokens: u64,
    pub finish_reason: FinishReason,
    /// Backend calls made for this response, including failed ones.
    pub attempts: u32,
}
