//! Scripted backend for tests and offline runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use vadchain_core::PromptKind;

use super::{BackendError, ChatBackend, CompletionReply, CompletionRequest};

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read mock script {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid mock script {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Failure {
    Transport,
    Unavailable,
    Auth,
}

/// First matching rule wins. Every present predicate must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockRule {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<PromptKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system_contains: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system_lacks: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_contains: Option<String>,
    /// Substring of any attached media reference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub media_contains: Option<String>,
    pub reply: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fail: Option<Failure>,
    /// Fail only the first n matches, then reply.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fail_times: Option<usize>,
}

impl MockRule {
    pub fn reply(reply: impl Into<String>) -> Self {
        Self {
            reply: reply.into(),
            ..Self::default()
        }
    }

    pub fn kind(mut self, kind: PromptKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn media(mut self, needle: impl Into<String>) -> Self {
        self.media_contains = Some(needle.into());
        self
    }

    pub fn system(mut self, needle: impl Into<String>) -> Self {
        self.system_contains = Some(needle.into());
        self
    }

    pub fn without_system(mut self, needle: impl Into<String>) -> Self {
        self.system_lacks = Some(needle.into());
        self
    }

    pub fn user(mut self, needle: impl Into<String>) -> Self {
        self.user_contains = Some(needle.into());
        self
    }

    fn matches(&self, request: &CompletionRequest) -> bool {
        let b = &request.bundle;
        let system = b.system_text().unwrap_or("");
        self.kind.is_none_or(|k| k == b.kind)
            && self.system_contains.as_deref().is_none_or(|s| system.contains(s))
            && self.system_lacks.as_deref().is_none_or(|s| !system.contains(s))
            && self.user_contains.as_deref().is_none_or(|s| b.user_text().contains(s))
            && self
                .media_contains
                .as_deref()
                .is_none_or(|s| b.media().any(|m| m.as_str().contains(s)))
    }
}

/// Resolution order: exact fingerprint, rules, per-kind sequence, default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    pub fingerprints: BTreeMap<String, String>,
    pub rules: Vec<MockRule>,
    pub sequences: BTreeMap<PromptKind, Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
    pub delay_ms: u64,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| ScriptError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }
}

#[derive(Debug, Default)]
struct Counters {
    by_kind: BTreeMap<&'static str, usize>,
    rule_hits: Vec<usize>,
    sequence_pos: BTreeMap<PromptKind, usize>,
    requests: Vec<CompletionRequest>,
}

pub struct MockBackend {
    script: MockScript,
    state: Mutex<Counters>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let rules = script.rules.len();
        Self {
            script,
            state: Mutex::new(Counters {
                rule_hits: vec![0; rules],
                ..Counters::default()
            }),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self, kind: PromptKind) -> usize {
        self.state.lock().unwrap().by_kind.get(kind.as_str()).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> usize {
        self.state.lock().unwrap().by_kind.values().sum()
    }

    pub fn call_counts(&self) -> BTreeMap<&'static str, usize> {
        self.state.lock().unwrap().by_kind.clone()
    }

    /// Every request seen so far, in arrival order.
    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn reset_counts(&self) {
        let mut s = self.state.lock().unwrap();
        s.by_kind.clear();
        s.requests.clear();
    }

    fn resolve(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut state = self.state.lock().unwrap();
        *state.by_kind.entry(request.kind().as_str()).or_default() += 1;
        state.requests.push(request.clone());

        if let Some(r) = self.script.fingerprints.get(&request.fingerprint()) {
            return Ok(r.clone());
        }
        if let Some(i) = self.script.rules.iter().position(|r| r.matches(request)) {
            let rule = &self.script.rules[i];
            state.rule_hits[i] += 1;
            if let Some(f) = rule.fail {
                if rule.fail_times.is_none_or(|n| state.rule_hits[i] <= n) {
                    return Err(match f {
                        Failure::Transport => BackendError::Transport {
                            attempts: 1,
                            message: "scripted transport failure".into(),
                        },
                        Failure::Unavailable => BackendError::Status {
                            status: 503,
                            message: "scripted outage".into(),
                        },
                        Failure::Auth => BackendError::Auth { status: 401 },
                    });
                }
            }
            return Ok(rule.reply.clone());
        }
        if let Some(seq) = self.script.sequences.get(&request.kind()) {
            let pos = state.sequence_pos.entry(request.kind()).or_default();
            if let Some(r) = seq.get(*pos) {
                *pos += 1;
                return Ok(r.clone());
            }
        }
        self.script.default.clone().ok_or(BackendError::Unscripted {
            kind: request.kind().as_str(),
        })
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionReply, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if self.script.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.script.delay_ms));
        }
        let result = self.resolve(request).map(CompletionReply::text);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}
