use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use crate::error::GatewayError;
use crate::types::{GenerationRequest, GenerationResponse};

/// A text-generation service. Implementations make exactly one attempt per call;
/// retries live in [`Gateway`].
#[async_trait]
pub trait Backend: Send + Sync {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError>;
}

/// Exponential backoff with multiplicative jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    /// Delays are scaled by a uniform draw from `[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            factor: 1.0,
            jitter: 0.0,
        }
    }

    /// Nominal delay after the `attempt`-th failure (1-based), before jitter.
    pub fn nominal_delay(&self, attempt: u32) -> Duration {
        let exp = self.factor.powi(attempt.saturating_sub(1) as i32);
        self.base_delay.mul_f64(exp)
    }

    fn delay(&self, attempt: u32) -> Duration {
        let nominal = self.nominal_delay(attempt);
        if self.jitter <= 0.0 || nominal.is_zero() {
            return nominal;
        }
        let scale = rand::rng().random_range(1.0 - self.jitter..=1.0 + self.jitter);
        nominal.mul_f64(scale)
    }
}

/// Wraps a backend with retries, a concurrency limit and billed-token accounting.
pub struct Gateway {
    model: String,
    backend: Arc<dyn Backend>,
    policy: RetryPolicy,
    permits: Semaphore,
    billed_tokens: AtomicU64,
    responses: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.model)
            .field("policy", &self.policy)
            .field("billed_tokens", &self.billed_tokens())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(model: impl Into<String>, backend: Arc<dyn Backend>, policy: RetryPolicy, concurrency: usize) -> Self {
        Self {
            model: model.into(),
            backend,
            policy,
            permits: Semaphore::new(concurrency.max(1)),
            billed_tokens: AtomicU64::new(0),
            responses: AtomicU64::new(0),
        }
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    /// Sum of `completion_tokens` over every successful response so far.
    pub fn billed_tokens(&self) -> u64 {
        self.billed_tokens.load(Ordering::SeqCst)
    }

    /// Successful responses so far.
    pub fn responses(&self) -> u64 {
        self.responses.load(Ordering::SeqCst)
    }

    /// Single-turn request for this gateway's model.
    pub fn request(&self, request_id: impl Into<String>, prompt: impl Into<String>, max_tokens: Option<u32>) -> GenerationRequest {
        let mut req = GenerationRequest::user(self.model.clone(), request_id, prompt);
        req.max_tokens = max_tokens;
        req
    }

    pub async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        request.validate()?;
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| GatewayError::Config("gateway closed".into()))?;

        let max_attempts = self.policy.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.generate(request).await {
                Ok(mut response) => {
                    response.attempts = attempt;
                    self.billed_tokens
                        .fetch_add(response.completion_tokens, Ordering::SeqCst);
                    self.responses.fetch_add(1, Ordering::SeqCst);
                    debug!(
                        request_id = %request.request_id,
                        attempt,
                        tokens = response.completion_tokens,
                        "generation complete"
                    );
                    return Ok(response);
                }
                Err(err) if err.is_retryable() && attempt < max_attempts => {
                    let delay = self.policy.delay(attempt);
                    warn!(request_id = %request.request_id, attempt, ?delay, error = %err, "retrying");
                    tokio::time::sleep(delay).await;
                }
                Err(GatewayError::Transient { message, .. }) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        message,
                    });
                }
                Err(err) => return Err(err),
            }
        }
    }
}
