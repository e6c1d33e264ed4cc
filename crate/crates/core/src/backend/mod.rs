//! Chat-completion backends for teacher and student models.
//!
//! A [`Client`] wraps a [`Transport`] (HTTP or replay fixture) with an on-disk
//! reply cache, bounded retries and a cap on in-flight requests. Every
//! request is keyed by a SHA-256 [`Fingerprint`] of its content.

mod cache;
mod fingerprint;
mod http;
mod replay;

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::RenderedPrompt;

pub use cache::ReplyCache;
pub use fingerprint::{fingerprint, fingerprint_request, Fingerprint};
pub use http::{HttpConfig, HttpTransport};
pub use replay::{write_fixture, FixtureEntry, ReplayTransport};

/// Decoding parameters sent with every request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    #[serde(default = "defaults::sample")]
    pub sample: bool,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default = "defaults::top_p")]
    pub top_p: f64,
    #[serde(default = "defaults::top_k")]
    pub top_k: u32,
    #[serde(default = "defaults::max_tokens")]
    pub max_tokens: u32,
}

mod defaults {
    pub fn sample() -> bool {
        true
    }
    pub fn temperature() -> f64 {
        0.7
    }
    pub fn top_p() -> f64 {
        0.95
    }
    pub fn top_k() -> u32 {
        5
    }
    pub fn max_tokens() -> u32 {
        512
    }
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            sample: defaults::sample(),
            temperature: defaults::temperature(),
            top_p: defaults::top_p(),
            top_k: defaults::top_k(),
            max_tokens: defaults::max_tokens(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.top_k == 0 {
            return Err("top_k must be positive".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }
}

/// Everything that determines a reply. `sample_index` distinguishes repeated
/// draws for the same prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: RenderedPrompt,
    pub params: GenerationParams,
    pub model_id: String,
    pub sample_index: u32,
}

impl CompletionRequest {
    pub fn new(
        prompt: RenderedPrompt,
        params: GenerationParams,
        model_id: impl Into<String>,
    ) -> Self {
        CompletionRequest {
            prompt,
            params,
            model_id: model_id.into(),
            sample_index: 0,
        }
    }

    pub fn with_sample(mut self, sample_index: u32) -> Self {
        self.sample_index = sample_index;
        self
    }

    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint_request(
            &self.prompt.text,
            &self.params,
            &self.model_id,
            self.sample_index,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelReply {
    pub raw_text: String,
    pub model_id: String,
    pub request_fingerprint: Fingerprint,
    pub latency_ms: u64,
    pub from_cache: bool,
}

/// Failure of a single transport attempt.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("no replay entry for fingerprint {0}")]
    ReplayMiss(Fingerprint),
}

impl TransportError {
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            TransportError::RateLimited { .. } | TransportError::Transient(_)
        )
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    AuthFailed(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("backend unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("no replay entry for fingerprint {0}")]
    ReplayMiss(Fingerprint),
    #[error("reply cache: {0}")]
    Cache(#[from] std::io::Error),
}

/// Sends one request and returns the first message text.
pub trait Transport: Send + Sync {
    fn send(
        &self,
        request: &CompletionRequest,
        fingerprint: &Fingerprint,
    ) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based), doubling each time.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(
            self.initial_backoff_ms
                .saturating_mul(factor)
                .min(self.max_backoff_ms),
        )
    }
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

pub struct Client {
    transport: Box<dyn Transport>,
    cache: Option<ReplyCache>,
    retry: RetryPolicy,
    limiter: Semaphore,
}

impl Client {
    pub fn new(transport: Box<dyn Transport>) -> Client {
        Client {
            transport,
            cache: None,
            retry: RetryPolicy::default(),
            limiter: Semaphore::new(4),
        }
    }

    pub fn with_cache(mut self, cache: ReplyCache) -> Client {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Client {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Client {
        self.limiter = Semaphore::new(n);
        self
    }

    pub fn cache(&self) -> Option<&ReplyCache> {
        self.cache.as_ref()
    }

    /// Returns the cached reply for `request` or asks the transport,
    /// retrying rate limits and transient failures with exponential backoff.
    pub fn complete(&self, request: &CompletionRequest) -> Result<ModelReply, BackendError> {
        let fp = request.fingerprint();
        if let Some(text) = self.cache.as_ref().and_then(|c| c.get(&fp)) {
            return Ok(ModelReply {
                raw_text: text,
                model_id: request.model_id.clone(),
                request_fingerprint: fp,
                latency_ms: 0,
                from_cache: true,
            });
        }

        let started = Instant::now();
        let text = {
            let _permit = self.limiter.acquire();
            self.send_with_retries(request, &fp)?
        };
        if let Some(cache) = &self.cache {
            cache.insert(&fp, &request.model_id, &text)?;
        }
        Ok(ModelReply {
            raw_text: text,
            model_id: request.model_id.clone(),
            request_fingerprint: fp,
            latency_ms: started.elapsed().as_millis() as u64,
            from_cache: false,
        })
    }

    fn send_with_retries(
        &self,
        request: &CompletionRequest,
        fp: &Fingerprint,
    ) -> Result<String, BackendError> {
        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.transport.send(request, fp) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempt < max_attempts => {
                    let delay = match &e {
                        TransportError::RateLimited {
                            retry_after: Some(d),
                        } => (*d).min(Duration::from_millis(self.retry.max_backoff_ms)),
                        _ => self.retry.backoff(attempt),
                    };
                    log::warn!(
                        "{}: attempt {attempt} failed ({e}); retrying in {delay:?}",
                        request.model_id
                    );
                    thread::sleep(delay);
                }
                Err(e) => {
                    return Err(match e {
                        TransportError::Auth(m) => BackendError::AuthFailed(m),
                        TransportError::RateLimited { .. } => {
                            BackendError::RateLimited { attempts: attempt }
                        }
                        TransportError::Transient(m) => BackendError::Unavailable {
                            attempts: attempt,
                            last: m,
                        },
                        TransportError::Malformed(m) => BackendError::MalformedResponse(m),
                        TransportError::Rejected(m) => BackendError::Rejected(m),
                        TransportError::ReplayMiss(fp) => BackendError::ReplayMiss(fp),
                    })
                }
            }
        }
    }
}
