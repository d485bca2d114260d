use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::GatewayError;
use crate::gateway::{Backend, Gateway, RetryPolicy};
use crate::mock::{MockBackend, MockRule, MockScript};
use crate::openai::OpenAiBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Openai,
    Mock,
}

/// One configured generation endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub model: String,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Mock script file (JSON), relative to the config file.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Inline mock rules, used after those from `script`.
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    600
}

fn default_attempts() -> u32 {
    5
}

fn default_retry_base_ms() -> u64 {
    1000
}

fn default_concurrency() -> usize {
    8
}

impl GatewayConfig {
    pub fn mock(model: impl Into<String>, rules: Vec<MockRule>) -> Self {
        Self {
            backend: BackendKind::Mock,
            model: model.into(),
            base_url: None,
            api_key_env: default_key_env(),
            script: None,
            rules,
            timeout_seconds: default_timeout(),
            max_attempts: default_attempts(),
            retry_base_ms: default_retry_base_ms(),
            concurrency: default_concurrency(),
        }
    }

    pub fn openai(model: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            backend: BackendKind::Openai,
            base_url: Some(base_url.into()),
            ..Self::mock(model, Vec::new())
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_delay: Duration::from_millis(self.retry_base_ms),
            ..RetryPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model.trim().is_empty() {
            return Err(GatewayError::Config("model must not be empty".into()));
        }
        if self.max_attempts == 0 {
            return Err(GatewayError::Config("max_attempts must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(GatewayError::Config("concurrency must be at least 1".into()));
        }
        if self.timeout_seconds == 0 {
            return Err(GatewayError::Config("timeout_seconds must be positive".into()));
        }
        match self.backend {
            BackendKind::Openai if self.base_url.is_none() => {
                Err(GatewayError::Config("openai backend needs base_url".into()))
            }
            BackendKind::Mock if self.script.is_none() && self.rules.is_empty() => {
                Err(GatewayError::Config("mock backend needs script or rules".into()))
            }
            _ => Ok(()),
        }
    }

    /// Builds the gateway; relative script paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Gateway, GatewayError> {
        self.validate()?;
        let backend: Arc<dyn Backend> = match self.backend {
            BackendKind::Openai => Arc::new(OpenAiBackend::from_env(
                self.base_url.as_deref().unwrap_or_default(),
                &self.api_key_env,
                Duration::from_secs(self.timeout_seconds),
            )?),
            BackendKind::Mock => {
                let mut rules = match &self.script {
                    Some(path) => MockScript::load(&base_dir.join(path))?.rules,
                    None => Vec::new(),
                };
                rules.extend(self.rules.iter().cloned());
                Arc::new(MockBackend::new(MockScript::new(rules))?)
            }
        };
        Ok(Gateway::new(
            self.model.clone(),
            backend,
            self.retry_policy(),
            self.concurrency,
        ))
    }
}
