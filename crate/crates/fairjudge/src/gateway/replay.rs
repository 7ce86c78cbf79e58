//! Replay store: recorded raw responses keyed by
//! (image digest, prompt digest, model), one JSON file per record.
//!
//! A run driven entirely by replay backends is byte-identical across
//! executions: raw text, latency, and usage all come from the records.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::backends::{BackendError, BackendReply, ErrorClass, JudgeBackend};
use super::price::TokenUsage;
use super::JudgeRequest;
use crate::digest::Digest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub raw_text: String,
    pub latency_s: f64,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone)]
pub struct ReplayStore {
    dir: PathBuf,
}

impl ReplayStore {
    pub fn open(dir: impl Into<PathBuf>) -> ReplayStore {
        ReplayStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record_path(&self, image: &Digest, prompt: &Digest, model_id: &str) -> PathBuf {
        let model: String = model_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '-' })
            .collect();
        self.dir.join(format!("{}_{}_{}.json", image.to_hex(), prompt.to_hex(), model))
    }

    pub fn lookup(
        &self,
        image: &Digest,
        prompt: &Digest,
        model_id: &str,
    ) -> Result<Option<ReplayRecord>, std::io::Error> {
        let path = self.record_path(image, prompt, model_id);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| std::io::Error::other(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn write(
        &self,
        image: &Digest,
        prompt: &Digest,
        model_id: &str,
        record: &ReplayRecord,
    ) -> Result<(), std::io::Error> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.record_path(image, prompt, model_id);
        let json = serde_json::to_string(record).expect("record serializes");
        std::fs::write(path, json)
    }
}

/// Backend that answers exclusively from a replay store. A missing record
/// is a hard, terminal failure naming the key.
pub struct ReplayBackend {
    store: ReplayStore,
}

impl ReplayBackend {
    pub fn new(store: ReplayStore) -> ReplayBackend {
        ReplayBackend { store }
    }
}

impl JudgeBackend for ReplayBackend {
    fn kind(&self) -> &'static str {
        "replay"
    }

    fn invoke(&self, req: &JudgeRequest) -> Result<BackendReply, BackendError> {
        let prompt_digest = req.prompt.digest();
        match self
            .store
            .lookup(&req.image.digest, &prompt_digest, &req.model_id)
        {
            Ok(Some(record)) => Ok(BackendReply {
                raw_text: record.raw_text,
                latency_s: Some(record.latency_s),
                usage: record.usage,
            }),
            Ok(None) => Err(BackendError::terminal(
                ErrorClass::MissingReplayRecord,
                format!(
                    "no replay record for (image={}, prompt={}, model={})",
                    req.image.digest, prompt_digest, req.model_id
                ),
            )),
            Err(e) => Err(BackendError::terminal(
                ErrorClass::MalformedReply,
                format!("replay store: {e}"),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Decoding, ImageRef};
    use crate::prompt::{Carrier, PromptText, PromptVariant};

    fn request(store_model: &str) -> JudgeRequest {
        JudgeRequest {
            request_id: "r1".into(),
            image: ImageRef::from_digest(Digest::of_str("image-1")),
            prompt: PromptText {
                body: "prompt body".into(),
                template_id: "alignment".into(),
                variant: PromptVariant::Full,
                perturbation: Carrier::PhotoOf,
            },
            model_id: store_model.into(),
            decoding: Decoding::default(),
        }
    }

    #[test]
    fn round_trips_records_by_key() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReplayStore::open(dir.path());
        let req = request("gpt-4.1");
        let record = ReplayRecord {
            raw_text: "{\"Alignment score\": \"4\"}".into(),
            latency_s: 4.47,
            usage: TokenUsage {
                input_tokens: 120,
                output_tokens: 16,
            },
        };
        store
            .write(&req.image.digest, &req.prompt.digest(), "gpt-4.1", &record)
            .unwrap();

        let backend = ReplayBackend::new(store);
        let reply = backend.invoke(&req).unwrap();
        assert_eq!(reply.raw_text, record.raw_text);
        assert_eq!(reply.latency_s, Some(4.47));
    }

    #[test]
    fn missing_record_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let backend = ReplayBackend::new(ReplayStore::open(dir.path()));
        let err = backend.invoke(&request("gpt-4.1")).unwrap_err();
        assert_eq!(err.class, ErrorClass::MissingReplayRecord);
        assert!(err.detail.contains("model=gpt-4.1"));
        assert!(!err.retryable);
    }
}
