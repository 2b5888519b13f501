//! Chat-completion transport: request rendering, fingerprints and backends.

mod http;
mod mock;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use vadchain_core::{PromptBundle, PromptKind};

pub use http::HttpBackend;
pub use mock::{Failure, MockBackend, MockRule, MockScript, ScriptError};

use crate::media::MediaStore;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend rejected request with status {status}: {message}")]
    Status { status: u16, message: String },
    #[error("credentials rejected (status {status})")]
    Auth { status: u16 },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("cannot read media {reference}: {message}")]
    Media { reference: String, message: String },
    #[error("no scripted reply for {kind} request")]
    Unscripted { kind: &'static str },
}

impl BackendError {
    /// Worth another attempt.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Everything that determines a reply. `media_digests` line up with
/// `bundle.media()`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: String,
    pub bundle: PromptBundle,
    pub media_digests: Vec<String>,
    pub temperature: f64,
    /// Re-asks after an unparseable reply need a fresh cache key.
    pub attempt: u32,
}

impl CompletionRequest {
    pub fn kind(&self) -> PromptKind {
        self.bundle.kind
    }

    /// Content address of the request: model, messages with media digests,
    /// decoding temperature.
    pub fn fingerprint(&self) -> String {
        let mut digests = self.media_digests.iter();
        let messages: Vec<Value> = self
            .bundle
            .messages
            .iter()
            .map(|m| {
                let media: Vec<&String> = digests.by_ref().take(m.media.len()).collect();
                json!({"role": m.role.as_str(), "text": m.text, "media": media})
            })
            .collect();
        let mut doc = json!({
            "model": self.model,
            "kind": self.bundle.kind.as_str(),
            "messages": messages,
            "temperature": self.temperature,
        });
        if self.attempt > 0 {
            doc["attempt"] = json!(self.attempt);
        }
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionReply {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency: Duration,
}

impl CompletionReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: None,
            latency: Duration::ZERO,
        }
    }
}

/// One attempt at a completion. Retries live in the caller.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionReply, BackendError>;
}

/// OpenAI-style `messages` array. Images go first in their message as
/// data-URL parts, followed by the text part.
pub fn render_messages(
    bundle: &PromptBundle,
    media: &MediaStore,
) -> Result<Vec<Value>, BackendError> {
    bundle
        .messages
        .iter()
        .map(|m| {
            if m.media.is_empty() {
                return Ok(json!({"role": m.role.as_str(), "content": m.text}));
            }
            let mut parts = Vec::with_capacity(m.media.len() + 1);
            for r in &m.media {
                let url = media.data_url(r).map_err(|e| BackendError::Media {
                    reference: r.as_str().to_owned(),
                    message: e.to_string(),
                })?;
                parts.push(json!({"type": "image_url", "image_url": {"url": url}}));
            }
            if !m.text.is_empty() {
                parts.push(json!({"type": "text", "text": m.text}));
            }
            Ok(json!({"role": m.role.as_str(), "content": parts}))
        })
        .collect()
}

pub fn render_payload(
    request: &CompletionRequest,
    media: &MediaStore,
) -> Result<Value, BackendError> {
    Ok(json!({
        "model": request.model,
        "messages": render_messages(&request.bundle, media)?,
        "temperature": request.temperature,
    }))
}
