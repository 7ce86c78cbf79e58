//! Uniform access to judge backends with retries, latency/cost capture,
//! and bounded parallelism.
//!
//! Raw model text is preserved verbatim; all cleaning happens in the
//! verdict parser. Transport failures are values ([`JudgeReply::Failed`]),
//! never panics, so one bad item cannot poison a batch.

mod backends;
mod price;
mod replay;

pub use backends::{BackendError, BackendReply, ErrorClass, JudgeBackend, LiveBackend, ScriptedBackend};
pub use price::{MicroUsd, Price, PriceBook, TokenUsage};
pub use replay::{ReplayBackend, ReplayRecord, ReplayStore};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::prompt::PromptText;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no backend configured for model `{0}`")]
    UnconfiguredModel(String),
    #[error("no price configured for model `{0}`")]
    UnpricedModel(String),
    #[error("max_in_flight must be at least 1")]
    BadMaxInFlight,
    #[error("pricebook line {line}: {reason}")]
    BadPriceBook { line: usize, reason: String },
}

/// Image handle: content digest always, local pixels when available.
/// Replay keys depend only on the digest, never on filesystem layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub digest: Digest,
    pub path: Option<PathBuf>,
}

impl ImageRef {
    pub fn from_digest(digest: Digest) -> ImageRef {
        ImageRef { digest, path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub request_id: String,
    pub image: ImageRef,
    pub prompt: PromptText,
    pub model_id: String,
    pub decoding: Decoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub request_id: String,
    pub raw_text: String,
    pub latency_s: f64,
    pub usage: TokenUsage,
    pub cost: MicroUsd,
    pub backend: String,
}

/// Terminal transport outcome after retries are exhausted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportFailure {
    pub request_id: String,
    pub class: ErrorClass,
    pub detail: String,
    pub attempts: u32,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum JudgeReply {
    Answered(JudgeResponse),
    Failed(TransportFailure),
}

impl JudgeReply {
    pub fn response(&self) -> Option<&JudgeResponse> {
        match self {
            JudgeReply::Answered(r) => Some(r),
            JudgeReply::Failed(_) => None,
        }
    }

    pub fn latency_s(&self) -> f64 {
        match self {
            JudgeReply::Answered(r) => r.latency_s,
            JudgeReply::Failed(f) => f.latency_s,
        }
    }

    pub fn cost(&self) -> MicroUsd {
        match self {
            JudgeReply::Answered(r) => r.cost,
            JudgeReply::Failed(_) => MicroUsd::ZERO,
        }
    }
}

/// Retry transient transport failures with jittered exponential backoff.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 1000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Zero-delay policy for tests and replay-only runs.
    pub fn immediate() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 0,
            jitter: false,
        }
    }

    fn delay_ms(&self, attempt: u32) -> u64 {
        if self.base_delay_ms == 0 {
            return 0;
        }
        let base = self.base_delay_ms.saturating_mul(1u64 << attempt.min(16));
        if self.jitter {
            base + rand::random_range(0..=self.base_delay_ms / 2 + 1)
        } else {
            base
        }
    }
}

/// Dispatches requests to per-model backends and prices every answer.
pub struct Gateway {
    backends: BTreeMap<String, Box<dyn JudgeBackend>>,
    prices: PriceBook,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new(prices: PriceBook) -> Gateway {
        Gateway {
            backends: BTreeMap::new(),
            prices,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Gateway {
        self.retry = retry;
        self
    }

    pub fn register(&mut self, model_id: impl Into<String>, backend: Box<dyn JudgeBackend>) {
        self.backends.insert(model_id.into(), backend);
    }

    pub fn prices(&self) -> &PriceBook {
        &self.prices
    }

    pub fn estimate_cost(&self, model_id: &str, usage: TokenUsage) -> Result<MicroUsd, GatewayError> {
        self.prices.estimate(model_id, usage)
    }

    /// Submit one request. Retryable failures (timeouts, transient
    /// transport) back off and retry up to the configured bound; the
    /// exhausted or terminal case is a [`JudgeReply::Failed`] value.
    pub fn submit(&self, req: &JudgeRequest) -> Result<JudgeReply, GatewayError> {
        let backend = self
            .backends
            .get(&req.model_id)
            .ok_or_else(|| GatewayError::UnconfiguredModel(req.model_id.clone()))?;
        // Pricing errors are configuration errors; surface them before
        // any network traffic.
        self.prices.estimate(&req.model_id, TokenUsage::default())?;

        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match backend.invoke(req) {
                Ok(reply) => {
                    let latency_s = reply
                        .latency_s
                        .unwrap_or_else(|| started.elapsed().as_secs_f64());
                    let cost = self.prices.estimate(&req.model_id, reply.usage)?;
                    return Ok(JudgeReply::Answered(JudgeResponse {
                        request_id: req.request_id.clone(),
                        raw_text: reply.raw_text,
                        latency_s,
                        usage: reply.usage,
                        cost,
                        backend: backend.kind().to_string(),
                    }));
                }
                Err(err) => {
                    if err.retryable && attempt < self.retry.max_attempts {
                        let delay = self.retry.delay_ms(attempt - 1);
                        if delay > 0 {
                            std::thread::sleep(std::time::Duration::from_millis(delay));
                        }
                        continue;
                    }
                    return Ok(JudgeReply::Failed(TransportFailure {
                        request_id: req.request_id.clone(),
                        class: err.class,
                        detail: err.detail,
                        attempts: attempt,
                        latency_s: started.elapsed().as_secs_f64(),
                    }));
                }
            }
        }
    }

    /// Submit many requests with at most `max_in_flight` outstanding at
    /// once. Output order equals input order regardless of completion
    /// order, and per-item failures stay independent.
    pub fn submit_batch(
        &self,
        reqs: &[JudgeRequest],
        max_in_flight: usize,
    ) -> Result<Vec<JudgeReply>, GatewayError> {
        if max_in_flight == 0 {
            return Err(GatewayError::BadMaxInFlight);
        }
        if reqs.is_empty() {
            return Ok(Vec::new());
        }
        if max_in_flight == 1 {
            return reqs.iter().map(|r| self.submit(r)).collect();
        }

        let results: Mutex<Vec<Option<Result<JudgeReply, GatewayError>>>> =
            Mutex::new((0..reqs.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = max_in_flight.min(reqs.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::SeqCst);
                    if idx >= reqs.len() {
                        break;
                    }
                    let outcome = self.submit(&reqs[idx]);
                    results.lock().expect("results lock")[idx] = Some(outcome);
                });
            }
        });
        results
            .into_inner()
            .expect("results lock")
            .into_iter()
            .map(|slot| slot.expect("every slot filled"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{Carrier, PromptVariant};

    fn prompt() -> PromptText {
        PromptText {
            body: "judge this".into(),
            template_id: "attribute_full".into(),
            variant: PromptVariant::Full,
            perturbation: Carrier::PhotoOf,
        }
    }

    fn request(id: &str, model: &str) -> JudgeRequest {
        JudgeRequest {
            request_id: id.into(),
            image: ImageRef::from_digest(Digest::of_str(id)),
            prompt: prompt(),
            model_id: model.into(),
            decoding: Decoding::default(),
        }
    }

    fn scripted_gateway(latency: f64) -> Gateway {
        let mut gw = Gateway::new(PriceBook::builtin()).with_retry(RetryPolicy::immediate());
        gw.register(
            "gpt-4.1",
            Box::new(ScriptedBackend::new("scripted", latency, |req: &JudgeRequest| {
                Ok(format!("echo {}", req.request_id))
            })),
        );
        gw
    }

    #[test]
    fn scripted_submit_prices_the_flat_rate() {
        let gw = scripted_gateway(0.5);
        let reply = gw.submit(&request("r1", "gpt-4.1")).unwrap();
        let resp = reply.response().unwrap();
        assert_eq!(resp.cost, MicroUsd(2500));
        assert_eq!(resp.latency_s, 0.5);
        assert_eq!(resp.raw_text, "echo r1");
    }

    #[test]
    fn unconfigured_model_is_an_error() {
        let gw = scripted_gateway(0.0);
        assert!(matches!(
            gw.submit(&request("r1", "nope")),
            Err(GatewayError::UnconfiguredModel(_))
        ));
    }

    #[test]
    fn batch_preserves_input_order() {
        let gw = scripted_gateway(0.0);
        let reqs: Vec<JudgeRequest> = (0..100).map(|i| request(&format!("r{i:03}"), "gpt-4.1")).collect();
        let replies = gw.submit_batch(&reqs, 8).unwrap();
        assert_eq!(replies.len(), 100);
        for (i, reply) in replies.iter().enumerate() {
            assert_eq!(reply.response().unwrap().raw_text, format!("echo r{i:03}"));
        }
    }

    #[test]
    fn zero_max_in_flight_is_rejected() {
        let gw = scripted_gateway(0.0);
        assert!(matches!(
            gw.submit_batch(&[], 0),
            Err(GatewayError::BadMaxInFlight)
        ));
    }

    #[test]
    fn one_auth_failure_does_not_poison_the_batch() {
        let mut gw = Gateway::new(PriceBook::builtin()).with_retry(RetryPolicy::immediate());
        gw.register(
            "gpt-4.1",
            Box::new(ScriptedBackend::new("scripted", 0.0, |req: &JudgeRequest| {
                if req.request_id == "r042" {
                    Err(BackendError::terminal(ErrorClass::Auth, "bad key"))
                } else {
                    Ok("{}".to_string())
                }
            })),
        );
        let reqs: Vec<JudgeRequest> = (0..100).map(|i| request(&format!("r{i:03}"), "gpt-4.1")).collect();
        let replies = gw.submit_batch(&reqs, 4).unwrap();
        let failures: Vec<usize> = replies
            .iter()
            .enumerate()
            .filter(|(_, r)| r.response().is_none())
            .map(|(i, _)| i)
            .collect();
        assert_eq!(failures, [42]);
        match &replies[42] {
            JudgeReply::Failed(f) => {
                assert_eq!(f.class, ErrorClass::Auth);
                assert_eq!(f.attempts, 1);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn retryable_failures_retry_up_to_the_bound() {
        let mut gw = Gateway::new(PriceBook::builtin()).with_retry(RetryPolicy::immediate());
        gw.register(
            "gpt-4.1",
            Box::new(ScriptedBackend::new("scripted", 0.0, |_req: &JudgeRequest| {
                Err(BackendError::retryable(ErrorClass::Timeout, "slow"))
            })),
        );
        let reply = gw.submit(&request("r1", "gpt-4.1")).unwrap();
        match reply {
            JudgeReply::Failed(f) => {
                assert_eq!(f.attempts, 3);
                assert_eq!(f.class, ErrorClass::Timeout);
            }
            _ => unreachable!(),
        }
    }
}
