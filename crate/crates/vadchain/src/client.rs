//! Typed model operations over role-bound backends.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use vadchain_core::parse::{self, ParseError};
use vadchain_core::{BoundingBox, MediaRef, PromptBundle, PromptKind, TagList, Templates};

use crate::backend::{
    BackendError, ChatBackend, CompletionRequest, HttpBackend, MockBackend, MockScript, ScriptError,
};
use crate::cache::ResponseCache;
use crate::config::{EndpointConfig, EndpointRole, RunConfig};
use crate::media::MediaStore;

/// Score used when the scorer never produces a parseable answer.
pub const FALLBACK_SCORE: f64 = 0.5;

const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("blank reply to a {0} request")]
    EmptyCaption(&'static str),
}

/// Counting semaphore bounding concurrent requests to one endpoint.
#[derive(Debug)]
pub struct Slots {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct SlotGuard<'a>(&'a Slots);

impl Slots {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SlotGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.max {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

struct Binding {
    endpoint: EndpointConfig,
    backend: Arc<dyn ChatBackend>,
    slots: Slots,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindCounts {
    pub backend_calls: usize,
    pub cache_hits: usize,
}

pub struct ModelClient {
    roles: BTreeMap<EndpointRole, Binding>,
    cache: Option<ResponseCache>,
    media: Arc<MediaStore>,
    templates: Templates,
    tag_cap: usize,
    strict: bool,
    counts: Mutex<BTreeMap<PromptKind, KindCounts>>,
    mock: Option<Arc<MockBackend>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientSetupError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("cannot read template override {path}: {source}")]
    Template {
        path: String,
        source: std::io::Error,
    },
}

/// Embedded templates with any `{dir}/{name}.txt` overrides applied.
pub fn load_templates(dir: Option<&std::path::Path>) -> Result<Templates, ClientSetupError> {
    let mut t = Templates::default();
    let Some(dir) = dir else {
        return Ok(t);
    };
    for name in vadchain_core::prompt::TEMPLATE_NAMES {
        let path = dir.join(format!("{name}.txt"));
        match std::fs::read_to_string(&path) {
            Ok(text) => *t.slot_mut(name).expect("listed template exists") = text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => {
                return Err(ClientSetupError::Template {
                    path: path.display().to_string(),
                    source,
                })
            }
        }
    }
    Ok(t)
}

impl ModelClient {
    /// Mock backend when the config names a script, HTTP otherwise.
    pub fn from_config(config: &RunConfig) -> Result<Self, ClientSetupError> {
        let media = Arc::new(MediaStore::new());
        let templates = load_templates(config.template_dir.as_deref())?;
        if let Some(script) = &config.mock_script {
            let mock = Arc::new(MockBackend::new(MockScript::load(script)?));
            return Ok(Self::with_mock(config, mock, templates, media));
        }
        let roles = EndpointRole::ALL
            .into_iter()
            .map(|role| {
                let endpoint = config.endpoints.get(role).clone();
                let backend: Arc<dyn ChatBackend> = Arc::new(HttpBackend::new(&endpoint, media.clone()));
                (role, backend)
            })
            .collect();
        Ok(Self::assemble(config, roles, templates, media, None))
    }

    pub fn with_mock(
        config: &RunConfig,
        mock: Arc<MockBackend>,
        templates: Templates,
        media: Arc<MediaStore>,
    ) -> Self {
        let roles = EndpointRole::ALL
            .into_iter()
            .map(|r| (r, mock.clone() as Arc<dyn ChatBackend>))
            .collect();
        Self::assemble(config, roles, templates, media, Some(mock))
    }

    /// One backend for every role.
    pub fn with_backend(config: &RunConfig, backend: Arc<dyn ChatBackend>) -> Self {
        let roles = EndpointRole::ALL.into_iter().map(|r| (r, backend.clone())).collect();
        Self::assemble(config, roles, Templates::default(), Arc::new(MediaStore::new()), None)
    }

    fn assemble(
        config: &RunConfig,
        backends: BTreeMap<EndpointRole, Arc<dyn ChatBackend>>,
        templates: Templates,
        media: Arc<MediaStore>,
        mock: Option<Arc<MockBackend>>,
    ) -> Self {
        let roles = backends
            .into_iter()
            .map(|(role, backend)| {
                let endpoint = config.endpoints.get(role).clone();
                let slots = Slots::new(endpoint.max_parallel);
                (role, Binding { endpoint, backend, slots })
            })
            .collect();
        Self {
            roles,
            cache: Some(ResponseCache::new(config.cache_dir.clone())),
            media,
            templates,
            tag_cap: config.tag_cap,
            strict: config.strict_parsing,
            counts: Mutex::new(BTreeMap::new()),
            mock,
        }
    }

    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn media(&self) -> &MediaStore {
        &self.media
    }

    pub fn mock(&self) -> Option<&MockBackend> {
        self.mock.as_deref()
    }

    pub fn endpoint(&self, role: EndpointRole) -> &EndpointConfig {
        &self.roles[&role].endpoint
    }

    pub fn counts(&self) -> BTreeMap<PromptKind, KindCounts> {
        self.counts.lock().unwrap().clone()
    }

    pub fn backend_calls(&self, kind: PromptKind) -> usize {
        self.counts.lock().unwrap().get(&kind).map_or(0, |c| c.backend_calls)
    }

    pub fn total_backend_calls(&self) -> usize {
        self.counts.lock().unwrap().values().map(|c| c.backend_calls).sum()
    }

    pub fn reset_counts(&self) {
        self.counts.lock().unwrap().clear();
    }

    fn count(&self, kind: PromptKind, f: impl FnOnce(&mut KindCounts)) {
        f(self.counts.lock().unwrap().entry(kind).or_default());
    }

    pub fn build_request(
        &self,
        role: EndpointRole,
        bundle: &PromptBundle,
        attempt: u32,
    ) -> Result<CompletionRequest, BackendError> {
        let endpoint = &self.roles[&role].endpoint;
        let bundle = if endpoint.system_role {
            bundle.clone()
        } else {
            bundle.without_system_role()
        };
        let media_digests = bundle
            .media()
            .map(|m| {
                self.media.digest(m).map_err(|e| BackendError::Media {
                    reference: m.as_str().to_owned(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(CompletionRequest {
            model: endpoint.model.clone(),
            bundle,
            media_digests,
            temperature: endpoint.temperature,
            attempt,
        })
    }

    /// Reply text for one rendered prompt, from cache when possible.
    pub fn request_completion(
        &self,
        role: EndpointRole,
        bundle: &PromptBundle,
        attempt: u32,
    ) -> Result<String, BackendError> {
        let request = self.build_request(role, bundle, attempt)?;
        let Some(cache) = &self.cache else {
            return self.call_with_retry(role, &request);
        };
        let key = request.fingerprint();
        if let Some(hit) = cache.get(&request.model, &key) {
            self.count(request.kind(), |c| c.cache_hits += 1);
            return Ok(hit);
        }
        cache.cached_call(&request.model, &key, || self.call_with_retry(role, &request))
    }

    fn call_with_retry(&self, role: EndpointRole, request: &CompletionRequest) -> Result<String, BackendError> {
        let binding = &self.roles[&role];
        let attempts = binding.endpoint.max_retries + 1;
        let mut delay = Duration::from_millis(binding.endpoint.retry_backoff_ms);
        for attempt in 1..=attempts {
            let result = {
                let _slot = binding.slots.acquire();
                self.count(request.kind(), |c| c.backend_calls += 1);
                binding.backend.complete(request)
            };
            match result {
                Ok(reply) => return Ok(reply.text),
                Err(e) if e.is_transient() && attempt < attempts => {
                    log::warn!(
                        "{} request to {} failed ({e}); retry {attempt}/{} in {delay:?}",
                        request.kind().as_str(),
                        binding.endpoint.model,
                        attempts - 1
                    );
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(MAX_BACKOFF);
                }
                Err(BackendError::Transport { message, .. }) => {
                    return Err(BackendError::Transport { attempts: attempt, message })
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!("loop returns on the final attempt")
    }

    pub fn caption_clip(&self, frames: &[MediaRef]) -> Result<String, ModelError> {
        let text = self.request_completion(EndpointRole::Captioner, &self.templates.caption(frames), 0)?;
        nonblank(text, PromptKind::Caption)
    }

    /// Never fails on an unparseable reply: re-asks up to the scorer's retry
    /// budget, then settles on [`FALLBACK_SCORE`].
    pub fn score_caption(
        &self,
        caption: &str,
        dataset_prior: &str,
        tags: Option<&TagList>,
    ) -> Result<f64, ModelError> {
        let bundle = self.templates.vad(dataset_prior, caption, tags);
        let retries = self.roles[&EndpointRole::Scorer].endpoint.max_retries;
        for attempt in 0..=retries {
            let text = self.request_completion(EndpointRole::Scorer, &bundle, attempt)?;
            match parse::parse_score_token(&text) {
                Ok(v) => return Ok(v),
                Err(_) => log::debug!("unparseable score reply {text:?} (attempt {})", attempt + 1),
            }
        }
        log::warn!("no parseable score after {} attempt(s); using {FALLBACK_SCORE}", retries + 1);
        Ok(FALLBACK_SCORE)
    }

    pub fn extract_tags(&self, frames: &[MediaRef]) -> Result<TagList, ModelError> {
        let text = self.request_completion(EndpointRole::Tagger, &self.templates.extract(frames), 0)?;
        let parsed = if self.strict {
            parse::parse_tag_list_strict(&text, self.tag_cap)
        } else {
            parse::try_parse_tag_list(&text, self.tag_cap)
        };
        Ok(parsed.unwrap_or_else(|e: ParseError| {
            log::warn!("tag extraction reply unusable ({e}); continuing without tags");
            TagList::empty()
        }))
    }

    pub fn localize_frame(
        &self,
        frame: &MediaRef,
        tags: Option<&TagList>,
        (width, height): (u32, u32),
    ) -> Result<Vec<BoundingBox>, ModelError> {
        let text = self.request_completion(EndpointRole::Localizer, &self.templates.loc(frame, tags), 0)?;
        let (w, h) = (width as f64, height as f64);
        let parsed = if self.strict {
            parse::parse_bbox_list_strict(&text, w, h)
        } else {
            parse::try_parse_bbox_list(&text, w, h)
        };
        Ok(parsed.unwrap_or_else(|e| {
            log::warn!("localization reply for {} unusable ({e})", frame.as_str());
            Vec::new()
        }))
    }

    pub fn describe_video(&self, frames: &[MediaRef], tags: Option<&TagList>) -> Result<String, ModelError> {
        let text = self.request_completion(EndpointRole::Describer, &self.templates.vau(frames, tags), 0)?;
        nonblank(text, PromptKind::Vau)
    }
}

fn nonblank(text: String, kind: PromptKind) -> Result<String, ModelError> {
    let t = text.trim();
    if t.is_empty() {
        Err(ModelError::EmptyCaption(kind.as_str()))
    } else {
        Ok(t.to_owned())
    }
}
