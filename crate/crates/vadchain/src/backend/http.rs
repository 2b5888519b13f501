use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::{render_payload, BackendError, ChatBackend, CompletionReply, CompletionRequest, Usage};
use crate::config::EndpointConfig;
use crate::media::MediaStore;

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    media: Arc<MediaStore>,
}

impl HttpBackend {
    pub fn new(endpoint: &EndpointConfig, media: Arc<MediaStore>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_secs)))
            .build()
            .into();
        let api_key = endpoint
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Self {
            url: format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/')),
            api_key,
            agent,
            media,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn transport(e: impl std::fmt::Display) -> BackendError {
    BackendError::Transport {
        attempts: 1,
        message: e.to_string(),
    }
}

pub(crate) fn parse_reply(body: &str) -> Result<(String, Option<Usage>), BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        // Some servers answer with a list of content parts.
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => return Err(BackendError::Protocol("reply has no choices[0].message.content".into())),
    };
    let usage = v.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok((text, usage))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionReply, BackendError> {
        let payload = render_payload(request, &self.media)?;
        let started = Instant::now();
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = req.send(payload.to_string()).map_err(transport)?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(transport)?;
        match status {
            200..=299 => {
                let (text, usage) = parse_reply(&body)?;
                Ok(CompletionReply {
                    text,
                    usage,
                    latency: started.elapsed(),
                })
            }
            401 | 403 => Err(BackendError::Auth { status }),
            _ => Err(BackendError::Status {
                status,
                message: body.chars().take(200).collect(),
            }),
        }
    }
}
