use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ChatModel, ModelRequest, ModelResponse, ProviderError};
use crate::cost::{Ledger, UsageRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_backoff_ms: u64,
    #[serde(default = "default_max_backoff")]
    pub max_backoff_ms: u64,
}

fn default_max_backoff() -> u64 {
    30_000
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_backoff_ms: 500, max_backoff_ms: default_max_backoff() }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self { attempts, base_backoff_ms: 0, max_backoff_ms: 0 }
    }

    /// Delay before retry number `retry` (1-based): base · 2^(retry-1), capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

/// Counting semaphore bounding concurrent outstanding requests.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a>(&'a InFlightLimit);

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), current: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut n = self.current.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        InFlightPermit(self)
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.0.current.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Token-bucket request rate limiter.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: u32, refill_per_sec: f64) -> Self {
        let capacity = f64::from(capacity.max(1));
        Self { capacity, refill_per_sec, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Blocks until one token is available and takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(state.1).as_secs_f64();
                state.0 = (state.0 + elapsed * self.refill_per_sec).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                if self.refill_per_sec <= 0.0 {
                    Duration::from_millis(50)
                } else {
                    Duration::from_secs_f64((1.0 - state.0) / self.refill_per_sec)
                }
            };
            std::thread::sleep(wait);
        }
    }
}

/// The single entry point for model calls: retries transient failures,
/// bounds concurrency and rate, and records exactly one usage record per
/// logical call.
pub struct ChatGateway {
    backend: Arc<dyn ChatModel>,
    ledger: Arc<Ledger>,
    retry: RetryPolicy,
    in_flight: Arc<InFlightLimit>,
    limiter: Option<Arc<TokenBucket>>,
    scope: Option<String>,
}

impl ChatGateway {
    pub fn new(backend: Arc<dyn ChatModel>, ledger: Arc<Ledger>) -> Self {
        Self { backend, ledger, retry: RetryPolicy::default(), in_flight: Arc::new(InFlightLimit::new(4)), limiter: None, scope: None }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.in_flight = Arc::new(InFlightLimit::new(max));
        self
    }

    pub fn with_rate_limit(mut self, bucket: TokenBucket) -> Self {
        self.limiter = Some(Arc::new(bucket));
        self
    }

    /// Shares backend, ledger and limits, but tags every record with
    /// `scope` (a video id) so per-video spend can be read back.
    pub fn scoped(&self, scope: &str) -> ChatGateway {
        ChatGateway {
            backend: self.backend.clone(),
            ledger: self.ledger.clone(),
            retry: self.retry,
            in_flight: self.in_flight.clone(),
            limiter: self.limiter.clone(),
            scope: Some(scope.to_string()),
        }
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    pub fn chat(&self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let attempts = self.retry.attempts.max(1);
        let mut used = 0u64;
        let mut last_err = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
            used += 1;
            if let Some(bucket) = &self.limiter {
                bucket.acquire();
            }
            let started = Instant::now();
            let outcome = {
                let _permit = self.in_flight.acquire();
                self.backend.chat(req)
            };
            match outcome {
                Ok(mut resp) => {
                    if resp.latency_ms == 0 {
                        resp.latency_ms = started.elapsed().as_millis() as u64;
                    }
                    self.record(req, used, resp.usage.input_tokens, resp.usage.output_tokens, true);
                    return Ok(resp);
                }
                Err(err) if err.is_retryable() && attempt < attempts => {
                    tracing::warn!(stage = %req.stage, attempt, %err, "retrying model call");
                    last_err = Some(err);
                }
                Err(err) => {
                    last_err = Some(err);
                    break;
                }
            }
        }
        self.record(req, used, 0, 0, false);
        Err(match last_err.expect("at least one attempt ran") {
            ProviderError::Transient(msg) => ProviderError::ModelFailure(format!("retries exhausted: {msg}")),
            other => other,
        })
    }

    /// Calls the model until `parse` accepts the reply, at most `attempts`
    /// times. Each try is its own logical call in the ledger. Transport
    /// errors that survive the gateway's own retries end the loop at once.
    pub fn chat_parsed<T>(
        &self,
        req: &ModelRequest,
        attempts: u32,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(T, ModelResponse), ProviderError> {
        let attempts = attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            let resp = self.chat(req)?;
            if let Some(value) = parse(&resp.text) {
                return Ok((value, resp));
            }
            tracing::warn!(stage = %req.stage, attempt, "unusable model reply");
            last = resp.text;
        }
        let snippet: String = last.chars().take(120).collect();
        Err(ProviderError::ModelFailure(format!("no usable reply after {attempts} attempts; last: {snippet:?}")))
    }

    fn record(&self, req: &ModelRequest, attempts: u64, input: u64, output: u64, ok: bool) {
        let mut rec = UsageRecord::new(&req.stage, &req.model, 1, input, output);
        rec.attempts = attempts;
        rec.ok = ok;
        rec.scope = self.scope.clone();
        self.ledger.record(rec);
    }
}
