//! Uniform access to a text-generation provider and an NLI scorer.
//!
//! [`Gateway`] wraps a [`Provider`] and an optional [`NliBackend`] with
//! capability checks, retries, the response cache and call counters.
//! [`Session`] is a per-(instance, method) view that attributes each call
//! to a purpose so budgets can be audited.

mod cache;
pub mod mock;
mod nli_http;
mod openai;
pub mod synthetic;
pub mod toy;
mod types;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use cache::{cache_key, CacheStats, ResponseCache};
pub use nli_http::HttpNliBackend;
pub use openai::{OpenAiCompatibleProvider, ProviderConfig};
pub use types::*;

#[derive(Debug, Error)]
pub enum GatewayError {
    /// Retryable failure reported by a backend.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("capability violation: {0}")]
    Capability(String),
    #[error("provider refused (empty output)")]
    Refusal,
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("NLI probabilities sum to {sum}, not 1")]
    NliNormalization { sum: f64 },
    #[error("no NLI backend configured")]
    NoNliBackend,
    #[error("invalid decode parameters: {0}")]
    InvalidParams(String),
    #[error("cache error: {0}")]
    Cache(String),
}

pub trait Provider: Send + Sync {
    /// Stable identifier, part of every cache key.
    fn id(&self) -> &str;

    fn capabilities(&self) -> ProviderCapabilities;

    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<Completion, GatewayError>;

    fn beam_search(
        &self,
        _messages: &[ChatMessage],
        _beam_width: usize,
        _max_tokens: u32,
    ) -> Result<Vec<BeamHypothesis>, GatewayError> {
        Err(GatewayError::Capability(format!(
            "provider {} has no beam search",
            self.id()
        )))
    }
}

pub trait NliBackend: Send + Sync {
    fn id(&self) -> &str;

    fn score(&self, request: &NliRequest) -> Result<NliProbs, GatewayError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub backoff_factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 500,
            backoff_factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay_ms: 0,
            backoff_factor: 2,
        }
    }

    fn run<T>(&self, mut f: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let attempts = self.max_attempts.max(1);
        let mut delay = self.base_delay_ms;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match f() {
                Err(GatewayError::Transient(msg)) => {
                    last = msg;
                    if attempt < attempts && delay > 0 {
                        thread::sleep(Duration::from_millis(delay));
                    }
                    delay = delay.saturating_mul(self.backoff_factor as u64);
                }
                other => return other,
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }
}

/// Snapshot of gateway-wide counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    /// Completion and beam-search requests, cached or not.
    pub generation_requests: u64,
    /// Completion and beam-search calls that reached the provider.
    pub backend_generation_calls: u64,
    pub nli_requests: u64,
    pub backend_nli_calls: u64,
    pub cache: CacheStats,
    /// Requests answered from the in-process memo.
    pub memo_hits: u64,
}

#[derive(Default)]
struct Counters {
    generation_requests: AtomicU64,
    backend_generation_calls: AtomicU64,
    nli_requests: AtomicU64,
    backend_nli_calls: AtomicU64,
    memo_hits: AtomicU64,
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    nli: Option<Arc<dyn NliBackend>>,
    cache: Option<ResponseCache>,
    memo: Option<Mutex<HashMap<String, serde_json::Value>>>,
    retry: RetryPolicy,
    counters: Counters,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Gateway {
            provider,
            nli: None,
            cache: None,
            memo: None,
            retry: RetryPolicy::default(),
            counters: Counters::default(),
        }
    }

    pub fn with_nli(mut self, nli: Arc<dyn NliBackend>) -> Self {
        self.nli = Some(nli);
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Keeps every successful response in memory for the gateway's lifetime,
    /// so identical requests reach the provider (or disk cache) once.
    pub fn with_memo(mut self) -> Self {
        self.memo = Some(Mutex::new(HashMap::new()));
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn capabilities(&self) -> ProviderCapabilities {
        self.provider.capabilities()
    }

    pub fn has_nli(&self) -> bool {
        self.nli.is_some()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            generation_requests: self.counters.generation_requests.load(Ordering::SeqCst),
            backend_generation_calls: self
                .counters
                .backend_generation_calls
                .load(Ordering::SeqCst),
            nli_requests: self.counters.nli_requests.load(Ordering::SeqCst),
            backend_nli_calls: self.counters.backend_nli_calls.load(Ordering::SeqCst),
            cache: self.cache.as_ref().map(|c| c.stats()).unwrap_or_default(),
            memo_hits: self.counters.memo_hits.load(Ordering::SeqCst),
        }
    }

    fn cached<T, F>(
        &self,
        provider: &str,
        endpoint: &str,
        request: serde_json::Value,
        f: F,
    ) -> Result<T, GatewayError>
    where
        T: Serialize + serde::de::DeserializeOwned,
        F: FnOnce() -> Result<T, GatewayError>,
    {
        let memo_key = self
            .memo
            .as_ref()
            .map(|_| cache_key(provider, endpoint, &request));
        if let (Some(memo), Some(key)) = (&self.memo, &memo_key) {
            let hit = memo.lock().expect("memo lock").get(key).cloned();
            if let Some(v) = hit {
                if let Ok(t) = serde_json::from_value(v) {
                    self.counters.memo_hits.fetch_add(1, Ordering::SeqCst);
                    return Ok(t);
                }
            }
        }
        let value = match &self.cache {
            Some(cache) => cache
                .get_or_compute(provider, endpoint, &request, f)
                .map(|(t, _)| t)?,
            None => f()?,
        };
        if let (Some(memo), Some(key)) = (&self.memo, memo_key) {
            let v = serde_json::to_value(&value).map_err(|e| GatewayError::Cache(e.to_string()))?;
            memo.lock().expect("memo lock").insert(key, v);
        }
        Ok(value)
    }

    pub fn complete(
        &self,
        prompt: &str,
        params: &DecodeParams,
    ) -> Result<Completion, GatewayError> {
        self.chat(&[ChatMessage::user(prompt)], params)
    }

    pub fn chat(
        &self,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<Completion, GatewayError> {
        let caps = self.capabilities();
        params.validate(&caps)?;
        self.counters
            .generation_requests
            .fetch_add(1, Ordering::SeqCst);
        let request = json!({ "messages": messages, "params": params });
        self.cached(self.provider.id(), "complete", request, || {
            self.retry.run(|| {
                self.counters
                    .backend_generation_calls
                    .fetch_add(1, Ordering::SeqCst);
                let c = self.provider.complete(messages, params)?;
                if c.text.trim().is_empty() {
                    return Err(GatewayError::Refusal);
                }
                c.normalize(&caps, params)
            })
        })
    }

    /// Up to `beam_width` distinct texts, sorted by descending sequence logprob.
    pub fn beam_search(
        &self,
        prompt: &str,
        beam_width: usize,
        max_tokens: u32,
    ) -> Result<Vec<BeamHypothesis>, GatewayError> {
        if !self.capabilities().has_beam_search {
            return Err(GatewayError::Capability(format!(
                "provider {} has no beam search",
                self.provider.id()
            )));
        }
        if beam_width == 0 || max_tokens == 0 {
            return Err(GatewayError::InvalidParams(
                "beam_width and max_tokens must be positive".into(),
            ));
        }
        self.counters
            .generation_requests
            .fetch_add(1, Ordering::SeqCst);
        let messages = [ChatMessage::user(prompt)];
        let request =
            json!({ "messages": messages, "beam_width": beam_width, "max_tokens": max_tokens });
        self.cached(self.provider.id(), "beam_search", request, || {
            self.retry.run(|| {
                self.counters
                    .backend_generation_calls
                    .fetch_add(1, Ordering::SeqCst);
                let mut beams = self
                    .provider
                    .beam_search(&messages, beam_width, max_tokens)?;
                beams.sort_by(|a, b| b.sequence_logprob.total_cmp(&a.sequence_logprob));
                let mut seen = std::collections::HashSet::new();
                beams.retain(|b| seen.insert(b.text.clone()));
                beams.truncate(beam_width);
                Ok(beams)
            })
        })
    }

    pub fn nli(
        &self,
        premise: &str,
        hypothesis: &str,
        context: Option<&str>,
    ) -> Result<NliProbs, GatewayError> {
        let backend = self.nli.as_ref().ok_or(GatewayError::NoNliBackend)?;
        self.counters.nli_requests.fetch_add(1, Ordering::SeqCst);
        let request = NliRequest {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
            context: context.map(str::to_string),
        };
        let value = serde_json::to_value(&request).expect("NliRequest serializes");
        self.cached(backend.id(), "nli", value, || {
            self.retry.run(|| {
                self.counters
                    .backend_nli_calls
                    .fetch_add(1, Ordering::SeqCst);
                let p = backend.score(&request)?;
                p.validate()?;
                Ok(p)
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CallPurpose {
    /// Producing candidate answers: main answer, samples, distractors.
    Generation,
    /// Eliciting confidence or entailment judgments on given text.
    Validation,
}

/// Calls attributed to one unit of work.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTally {
    pub generation: u64,
    pub validation: u64,
    pub nli: u64,
}

impl std::ops::AddAssign for CallTally {
    fn add_assign(&mut self, o: CallTally) {
        self.generation += o.generation;
        self.validation += o.validation;
        self.nli += o.nli;
    }
}

impl std::ops::Add for CallTally {
    type Output = CallTally;
    fn add(mut self, o: CallTally) -> CallTally {
        self += o;
        self
    }
}

/// A counting view of a [`Gateway`]. Safe to share across threads.
pub struct Session<'g> {
    gateway: &'g Gateway,
    generation: AtomicU64,
    validation: AtomicU64,
    nli: AtomicU64,
}

impl<'g> Session<'g> {
    pub fn new(gateway: &'g Gateway) -> Self {
        Session {
            gateway,
            generation: AtomicU64::new(0),
            validation: AtomicU64::new(0),
            nli: AtomicU64::new(0),
        }
    }

    pub fn gateway(&self) -> &'g Gateway {
        self.gateway
    }

    pub fn capabilities(&self) -> ProviderCapabilities {
        self.gateway.capabilities()
    }

    pub fn tally(&self) -> CallTally {
        CallTally {
            generation: self.generation.load(Ordering::SeqCst),
            validation: self.validation.load(Ordering::SeqCst),
            nli: self.nli.load(Ordering::SeqCst),
        }
    }

    fn count(&self, purpose: CallPurpose) {
        match purpose {
            CallPurpose::Generation => self.generation.fetch_add(1, Ordering::SeqCst),
            CallPurpose::Validation => self.validation.fetch_add(1, Ordering::SeqCst),
        };
    }

    pub fn complete(
        &self,
        purpose: CallPurpose,
        prompt: &str,
        params: &DecodeParams,
    ) -> Result<Completion, GatewayError> {
        self.count(purpose);
        self.gateway.complete(prompt, params)
    }

    pub fn chat(
        &self,
        purpose: CallPurpose,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<Completion, GatewayError> {
        self.count(purpose);
        self.gateway.chat(messages, params)
    }

    pub fn beam_search(
        &self,
        prompt: &str,
        beam_width: usize,
        max_tokens: u32,
    ) -> Result<Vec<BeamHypothesis>, GatewayError> {
        self.count(CallPurpose::Generation);
        self.gateway.beam_search(prompt, beam_width, max_tokens)
    }

    pub fn nli(
        &self,
        premise: &str,
        hypothesis: &str,
        context: Option<&str>,
    ) -> Result<NliProbs, GatewayError> {
        self.nli.fetch_add(1, Ordering::SeqCst);
        self.gateway.nli(premise, hypothesis, context)
    }
}
