//! Judge backends: live chat-completions endpoints and scripted synthetic
//! judges. The replay backend lives in `replay.rs`.

use std::fmt;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::price::TokenUsage;
use super::JudgeRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorClass {
    Auth,
    Timeout,
    Transport,
    MalformedReply,
    MissingReplayRecord,
}

impl ErrorClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorClass::Auth => "auth",
            ErrorClass::Timeout => "timeout",
            ErrorClass::Transport => "transport",
            ErrorClass::MalformedReply => "malformed-reply",
            ErrorClass::MissingReplayRecord => "missing-replay-record",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct BackendError {
    pub class: ErrorClass,
    pub detail: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn terminal(class: ErrorClass, detail: impl Into<String>) -> BackendError {
        BackendError {
            class,
            detail: detail.into(),
            retryable: false,
        }
    }

    pub fn retryable(class: ErrorClass, detail: impl Into<String>) -> BackendError {
        BackendError {
            class,
            detail: detail.into(),
            retryable: true,
        }
    }
}

/// What a backend hands back. `latency_s` is `Some` only when the backend
/// itself is the source of truth (replay, scripted); live calls are timed
/// by the gateway.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub raw_text: String,
    pub latency_s: Option<f64>,
    pub usage: TokenUsage,
}

pub trait JudgeBackend: Send + Sync {
    fn kind(&self) -> &'static str;
    fn invoke(&self, req: &JudgeRequest) -> Result<BackendReply, BackendError>;
}

/// Chat-completions style HTTPS backend. The prompt goes in as a text
/// part and the image as a base64 data URL; credentials come from a
/// per-backend environment variable.
pub struct LiveBackend {
    endpoint: String,
    api_key_env: String,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(endpoint: impl Into<String>, api_key_env: impl Into<String>) -> LiveBackend {
        LiveBackend {
            endpoint: endpoint.into(),
            api_key_env: api_key_env.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(120))
                .build()
                .expect("client builds"),
        }
    }
}

impl JudgeBackend for LiveBackend {
    fn kind(&self) -> &'static str {
        "live"
    }

    fn invoke(&self, req: &JudgeRequest) -> Result<BackendReply, BackendError> {
        let api_key = std::env::var(&self.api_key_env).map_err(|_| {
            BackendError::terminal(
                ErrorClass::Auth,
                format!("environment variable {} is not set", self.api_key_env),
            )
        })?;
        let Some(path) = &req.image.path else {
            return Err(BackendError::terminal(
                ErrorClass::Transport,
                format!("image bytes unavailable for digest {}", req.image.digest),
            ));
        };
        let bytes = std::fs::read(path).map_err(|e| {
            BackendError::terminal(ErrorClass::Transport, format!("read {}: {e}", path.display()))
        })?;
        let data_url = format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(bytes)
        );
        let payload = json!({
            "model": req.model_id,
            "temperature": req.decoding.temperature,
            "max_tokens": req.decoding.max_output_tokens,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": req.prompt.body},
                    {"type": "image_url", "image_url": {"url": data_url}},
                ],
            }],
        });
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(api_key)
            .json(&payload)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    BackendError::retryable(ErrorClass::Timeout, e.to_string())
                } else {
                    BackendError::retryable(ErrorClass::Transport, e.to_string())
                }
            })?;

        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(BackendError::terminal(
                ErrorClass::Auth,
                format!("endpoint returned {status}"),
            ));
        }
        if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::retryable(
                ErrorClass::Transport,
                format!("endpoint returned {status}"),
            ));
        }
        if !status.is_success() {
            return Err(BackendError::terminal(
                ErrorClass::MalformedReply,
                format!("endpoint returned {status}"),
            ));
        }

        let body: serde_json::Value = response
            .json()
            .map_err(|e| BackendError::terminal(ErrorClass::MalformedReply, e.to_string()))?;
        let raw_text = body
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                BackendError::terminal(ErrorClass::MalformedReply, "missing choices[0].message.content")
            })?
            .to_string();
        let usage = TokenUsage {
            input_tokens: body
                .pointer("/usage/prompt_tokens")
                .and_then(serde_json::Value::as_u64)
                .unwrap_or(0),
            output_tokens: body
                .pointer("/usage/completion_tokens")
                .and_then(serde_json::Value::as_u64)
                .unwrap_or(0),
        };
        Ok(BackendReply {
            raw_text,
            latency_s: None,
            usage,
        })
    }
}

/// Deterministic synthetic judge driven by a responder closure; fixtures
/// and offline demos use these. Usage is derived from text lengths so
/// token-rate pricing stays deterministic.
pub struct ScriptedBackend<F> {
    name: &'static str,
    latency_s: f64,
    responder: F,
}

impl<F> ScriptedBackend<F>
where
    F: Fn(&JudgeRequest) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(name: &'static str, latency_s: f64, responder: F) -> ScriptedBackend<F> {
        ScriptedBackend {
            name,
            latency_s,
            responder,
        }
    }
}

impl<F> JudgeBackend for ScriptedBackend<F>
where
    F: Fn(&JudgeRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn kind(&self) -> &'static str {
        self.name
    }

    fn invoke(&self, req: &JudgeRequest) -> Result<BackendReply, BackendError> {
        let raw_text = (self.responder)(req)?;
        let usage = TokenUsage {
            input_tokens: (req.prompt.body.len() / 4) as u64,
            output_tokens: (raw_text.len() / 4) as u64,
        };
        Ok(BackendReply {
            raw_text,
            latency_s: Some(self.latency_s),
            usage,
        })
    }
}
