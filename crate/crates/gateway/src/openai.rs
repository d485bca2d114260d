//! Client for OpenAI-compatible `POST {base_url}/chat/completions`.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::error::GatewayError;
use crate::gateway::Backend;
use crate::types::{FinishReason, GenerationRequest, GenerationResponse, Message};

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

/// JSON body sent for `request`.
pub fn wire_body(request: &GenerationRequest) -> serde_json::Value {
    serde_json::to_value(WireRequest {
        model: &request.model,
        messages: &request.messages,
        max_tokens: request.max_tokens,
        temperature: request.temperature,
    })
    .expect("request serializes")
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    completion_tokens: u64,
    completion_tokens_details: Option<WireTokenDetails>,
}

#[derive(Debug, Deserialize)]
struct WireTokenDetails {
    reasoning_tokens: Option<u64>,
}

/// Parses a chat-completions response body.
pub fn parse_response(body: &str) -> Result<GenerationResponse, GatewayError> {
    let wire: WireResponse = serde_json::from_str(body)
        .map_err(|e| GatewayError::Protocol(format!("unreadable response body: {e}")))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
    let usage = wire
        .usage
        .ok_or_else(|| GatewayError::Protocol("response has no usage block".into()))?;
    Ok(GenerationResponse {
        text: choice.message.content.unwrap_or_default(),
        completion_tokens: usage.completion_tokens,
        reasoning_tokens: usage
            .completion_tokens_details
            .and_then(|d| d.reasoning_tokens)
            .unwrap_or(0),
        finish_reason: FinishReason::from_wire(choice.finish_reason.as_deref()),
        attempts: 1,
    })
}

pub struct OpenAiBackend {
    client: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl std::fmt::Debug for OpenAiBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiBackend")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl OpenAiBackend {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        })
    }

    /// Reads the API key from the environment variable `key_env`.
    pub fn from_env(base_url: &str, key_env: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let api_key = std::env::var(key_env)
            .map_err(|_| GatewayError::Config(format!("environment variable {key_env} is not set")))?;
        Self::new(base_url, Some(api_key), timeout)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn transport_error(err: reqwest::Error) -> GatewayError {
    if err.is_timeout() || err.is_connect() || err.is_request() {
        GatewayError::Transient {
            status: None,
            message: err.to_string(),
        }
    } else {
        GatewayError::Protocol(err.to_string())
    }
}

#[async_trait]
impl Backend for OpenAiBackend {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let mut http = self.client.post(&self.endpoint).json(&wire_body(request));
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().await.map_err(transport_error)?;
        let status = response.status();
        let body = response.text().await.map_err(transport_error)?;
        if !status.is_success() {
            return Err(GatewayError::from_status(status.as_u16(), body));
        }
        parse_response(&body)
    }
}
