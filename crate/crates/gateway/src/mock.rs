//! Scripted backend for tests and offline runs.
//!
//! A script is an ordered list of rules. A call is served by the first live rule
//! whose matcher (`contains` on the prompt, `request_id` substring) accepts it;
//! if none does, by the first live rule without a matcher. Each rule serves
//! `repeat` responses (0 means unlimited) and can be told to fail a number of
//! times before its first success. Every call is recorded in a transcript.
//!
//! Sequence rules hand out responses in arrival order, so they are only
//! deterministic when calls are issued one at a time. Scripts driven by
//! concurrent callers should use matchers.

use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::error::GatewayError;
use crate::gateway::Backend;
use crate::types::{FinishReason, GenerationRequest, GenerationResponse};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Prompt substring that selects this rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// Request-id substring that selects this rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    pub response: String,
    /// Billed tokens; whitespace-token count of `response` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<u64>,
    #[serde(default)]
    pub reasoning_tokens: u64,
    #[serde(default)]
    pub finish_reason: FinishReason,
    #[serde(default = "one")]
    pub repeat: u32,
    /// Calls to fail before serving.
    #[serde(default)]
    pub failures: u32,
    #[serde(default = "too_many_requests")]
    pub failure_status: u16,
}

fn one() -> u32 {
    1
}

fn too_many_requests() -> u16 {
    429
}

impl MockRule {
    /// Rule with no matcher, consumed in script order.
    pub fn sequence(response: impl Into<String>) -> Self {
        Self {
            contains: None,
            request_id: None,
            response: response.into(),
            tokens: None,
            reasoning_tokens: 0,
            finish_reason: FinishReason::Stop,
            repeat: 1,
            failures: 0,
            failure_status: 429,
        }
    }

    pub fn contains(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            contains: Some(pattern.into()),
            ..Self::sequence(response)
        }
    }

    pub fn for_request(id_pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            request_id: Some(id_pattern.into()),
            ..Self::sequence(response)
        }
    }

    pub fn tokens(mut self, tokens: u64) -> Self {
        self.tokens = Some(tokens);
        self
    }

    pub fn repeat(mut self, times: u32) -> Self {
        self.repeat = times;
        self
    }

    pub fn unlimited(self) -> Self {
        self.repeat(0)
    }

    pub fn failing(mut self, failures: u32, status: u16) -> Self {
        self.failures = failures;
        self.failure_status = status;
        self
    }

    fn has_matcher(&self) -> bool {
        self.contains.is_some() || self.request_id.is_some()
    }

    fn accepts(&self, request: &GenerationRequest, prompt: &str) -> bool {
        self.contains.as_deref().is_none_or(|p| prompt.contains(p))
            && self
                .request_id
                .as_deref()
                .is_none_or(|p| request.request_id.contains(p))
    }

    fn billed_tokens(&self) -> u64 {
        self.tokens
            .unwrap_or_else(|| self.response.split_whitespace().count() as u64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Self {
        Self { rules }
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(text).map_err(|e| GatewayError::Config(format!("mock script: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("mock script {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum MockOutcome {
    Served { tokens: u64 },
    Failed { status: u16 },
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_id: String,
    pub prompt: String,
    pub max_tokens: Option<u32>,
    /// Index of the serving rule.
    pub rule: Option<usize>,
    #[serde(flatten)]
    pub outcome: MockOutcome,
}

#[derive(Debug)]
struct RuleState {
    /// `None` when unlimited.
    remaining: Option<u32>,
    failures_left: u32,
}

#[derive(Debug)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    state: Mutex<(Vec<RuleState>, Vec<TranscriptEntry>)>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, GatewayError> {
        if script.rules.is_empty() {
            return Err(GatewayError::Config("mock script has no rules".into()));
        }
        let states = script
            .rules
            .iter()
            .map(|r| RuleState {
                remaining: (r.repeat > 0).then_some(r.repeat),
                failures_left: r.failures,
            })
            .collect();
        Ok(Self {
            rules: script.rules,
            state: Mutex::new((states, Vec::new())),
        })
    }

    pub fn from_rules(rules: Vec<MockRule>) -> Result<Self, GatewayError> {
        Self::new(MockScript::new(rules))
    }

    /// Every call received so far, in arrival order.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.state.lock().expect("mock state").1.clone()
    }

    /// Prompts received so far, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.transcript().into_iter().map(|e| e.prompt).collect()
    }

    fn select(&self, states: &[RuleState], request: &GenerationRequest, prompt: &str) -> Option<usize> {
        let live = |i: &usize| states[*i].remaining != Some(0);
        let matched = (0..self.rules.len())
            .filter(live)
            .find(|&i| self.rules[i].has_matcher() && self.rules[i].accepts(request, prompt));
        matched.or_else(|| {
            (0..self.rules.len())
                .filter(live)
                .find(|&i| !self.rules[i].has_matcher())
        })
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let prompt = request.prompt_text();
        let mut guard = self.state.lock().expect("mock state");
        let (states, transcript) = &mut *guard;
        let mut entry = TranscriptEntry {
            request_id: request.request_id.clone(),
            prompt: prompt.clone(),
            max_tokens: request.max_tokens,
            rule: None,
            outcome: MockOutcome::Exhausted,
        };

        let Some(i) = self.select(states, request, &prompt) else {
            transcript.push(entry);
            return Err(GatewayError::ScriptExhausted {
                request_id: request.request_id.clone(),
            });
        };
        let rule = &self.rules[i];
        let state = &mut states[i];
        entry.rule = Some(i);

        if state.failures_left > 0 {
            state.failures_left -= 1;
            entry.outcome = MockOutcome::Failed {
                status: rule.failure_status,
            };
            transcript.push(entry);
            return Err(GatewayError::from_status(
                rule.failure_status,
                format!("scripted failure from rule {i}"),
            ));
        }

        if let Some(left) = state.remaining.as_mut() {
            *left -= 1;
        }
        let tokens = rule.billed_tokens();
        entry.outcome = MockOutcome::Served { tokens };
        transcript.push(entry);
        Ok(GenerationResponse {
            text: rule.response.clone(),
            completion_tokens: tokens,
            reasoning_tokens: rule.reasoning_tokens,
            finish_reason: rule.finish_reason,
            attempts: 1,
        })
    }
}
