//! Prompt templates and their composition.
//!
//! The default templates reproduce the published prompt wording byte for
//! byte. Adjacent string fragments of the original prompts are joined with
//! no separator, exactly as Python's implicit literal concatenation would.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::score::SuspicionWindow;

/// Default number of tags kept from an extraction reply.
pub const DEFAULT_TAG_CAP: usize = 8;

/// Base anomaly definition substituted into the scoring prompt.
pub const BASE_PRIOR: &str = "suspicious activities";

/// Named dataset priors: `(preset, phrase)`.
pub const DATASET_PRIORS: &[(&str, &str)] = &[
    ("base", BASE_PRIOR),
    ("ucf-crime", "suspicious or potentially criminal"),
    ("xd-violence", "suspicious or violent"),
    ("ubnormal", BASE_PRIOR),
];

pub fn dataset_prior(preset: &str) -> Option<&'static str> {
    DATASET_PRIORS
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(preset))
        .map(|(_, phrase)| *phrase)
}

/// Opaque reference to one image attached to a message (usually a path).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MediaRef(pub String);

impl From<&str> for MediaRef {
    fn from(s: &str) -> Self {
        Self(s.into())
    }
}

impl MediaRef {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Caption,
    Vad,
    Extract,
    Loc,
    Vau,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::Caption,
        PromptKind::Vad,
        PromptKind::Extract,
        PromptKind::Loc,
        PromptKind::Vau,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::Caption => "caption",
            PromptKind::Vad => "vad",
            PromptKind::Extract => "extract",
            PromptKind::Loc => "loc",
            PromptKind::Vau => "vau",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub media: Vec<MediaRef>,
}

/// A fully rendered request prompt: at most one system message followed by
/// the user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub messages: Vec<Message>,
}

impl PromptBundle {
    fn new(kind: PromptKind, system: Option<String>, user: String, media: Vec<MediaRef>) -> Self {
        let mut messages = Vec::with_capacity(2);
        if let Some(text) = system {
            messages.push(Message {
                role: Role::System,
                text,
                media: Vec::new(),
            });
        }
        messages.push(Message {
            role: Role::User,
            text: user,
            media,
        });
        Self { kind, messages }
    }

    pub fn system_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.text.as_str())
    }

    pub fn user(&self) -> &Message {
        self.messages
            .iter()
            .find(|m| m.role == Role::User)
            .expect("bundle always carries a user message")
    }

    pub fn user_text(&self) -> &str {
        &self.user().text
    }

    pub fn media(&self) -> impl Iterator<Item = &MediaRef> {
        self.messages.iter().flat_map(|m| m.media.iter())
    }

    /// Folds the system text into the front of the user text, for backends
    /// that do not accept a system role.
    pub fn without_system_role(&self) -> Self {
        let Some(system) = self.system_text() else {
            return self.clone();
        };
        let user = self.user();
        let text = if user.text.is_empty() {
            system.to_owned()
        } else {
            let mut t = String::with_capacity(system.len() + 1 + user.text.len());
            t.push_str(system);
            t.push('\n');
            t.push_str(&user.text);
            t
        };
        Self {
            kind: self.kind,
            messages: alloc::vec![Message {
                role: Role::User,
                text,
                media: user.media.clone(),
            }],
        }
    }

    /// Stable plain-text rendering used by golden files.
    pub fn render_canonical(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "kind: {}", self.kind.as_str());
        for m in &self.messages {
            let _ = writeln!(out, "--- {} (media: {})", m.role.as_str(), m.media.len());
            out.push_str(&m.text);
            out.push('\n');
        }
        out
    }
}

/// Ordered anomaly phrases extracted from the suspicious window.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TagList {
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_window: Option<SuspicionWindow>,
}

impl TagList {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Normalizes phrases: trims, strips bracket characters, drops empties
    /// and duplicates, keeps at most `cap`.
    pub fn from_phrases<I, S>(phrases: I, cap: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tags: Vec<String> = Vec::new();
        for p in phrases {
            if tags.len() >= cap {
                break;
            }
            let cleaned: String = p
                .as_ref()
                .chars()
                .filter(|c| !matches!(c, '[' | ']'))
                .collect();
            let cleaned = cleaned.trim();
            if cleaned.is_empty() || tags.iter().any(|t| t == cleaned) {
                continue;
            }
            tags.push(cleaned.to_owned());
        }
        Self {
            tags,
            source_window: None,
        }
    }

    pub fn with_window(mut self, window: SuspicionWindow) -> Self {
        self.source_window = Some(window);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn joined(&self) -> String {
        self.tags.join(", ")
    }
}

fn nonempty(tags: Option<&TagList>) -> Option<&TagList> {
    tags.filter(|t| !t.is_empty())
}

/// Substitutes `{dataset_prior}`, `{tags}` and `{caption}` in one pass. Any
/// other brace sequence is copied through untouched.
pub fn fill(template: &str, dataset_prior: &str, tags: &str, caption: &str) -> String {
    let mut out = String::with_capacity(template.len() + caption.len());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let (value, skip) = if tail.starts_with("{dataset_prior}") {
            (Some(dataset_prior), "{dataset_prior}".len())
        } else if tail.starts_with("{tags}") {
            (Some(tags), "{tags}".len())
        } else if tail.starts_with("{caption}") {
            (Some(caption), "{caption}".len())
        } else {
            (None, 1)
        };
        match value {
            Some(v) => out.push_str(v),
            None => out.push('{'),
        }
        rest = &tail[skip..];
    }
    out.push_str(rest);
    out
}

/// Template registry. Field names double as override file stems
/// (`<name>.txt`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Templates {
    pub caption_system: String,
    pub vad_system_head: String,
    pub vad_system_tail: String,
    pub vad_user: String,
    pub vad_tag_injection: String,
    pub extract_system: String,
    pub extract_user: String,
    pub loc_user: String,
    pub loc_tagged_user: String,
    pub vau_system: String,
    pub vau_user: String,
    pub vau_tag_injection: String,
    /// Joiner placed between the VAU system text and the appended tag hint.
    pub vau_injection_separator: String,
}

pub const TEMPLATE_NAMES: &[&str] = &[
    "caption_system",
    "vad_system_head",
    "vad_system_tail",
    "vad_user",
    "vad_tag_injection",
    "extract_system",
    "extract_user",
    "loc_user",
    "loc_tagged_user",
    "vau_system",
    "vau_user",
    "vau_tag_injection",
    "vau_injection_separator",
];

const JSON_BOX_FORMAT: &str =
    "Return your answer in JSON format: [{\"bbox_2d\": [x1, y1, x2, y2], \"confidence\": c}].";

impl Default for Templates {
    fn default() -> Self {
        Self {
            caption_system: concat!(
                "You are an AI assistant analyzing this video segment. ",
                "Summarize the main events or actions in a concise way."
            )
            .into(),
            vad_system_head: concat!(
                "How would you rate the scene described on a scale from 0 to 1, ",
                "with 0 representing a standard scene and 1 denoting a scene with ",
                "{dataset_prior} activities?"
            )
            .into(),
            vad_system_tail: concat!(
                "Please provide the response in the form of a Python list and respond with ",
                "only one number in the provided list below ",
                "[0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0] ",
                "without any textual explanation. It should begin with '[' and end with ']'."
            )
            .into(),
            vad_user: "{caption}".into(),
            vad_tag_injection: concat!(
                "In addition, we have identified certain {dataset_prior} behaviors that may ",
                "appear in the video. Please consider these carefully when deciding on the ",
                "final anomaly rating. [Potentially reported suspicious activities: {tags}]"
            )
            .into(),
            extract_system: "You are an AI assistant analyzing a suspicious segment of a video. "
                .into(),
            extract_user: concat!(
                "Analyze the video interval to identify any possible suspicious behaviors. ",
                "Return your answer strictly as a Python-style list of phrases that could briefly describe ",
                "the suspicious scene split by commas. ",
                "No additional commentary or text, return only the list."
            )
            .into(),
            loc_user: alloc::format!(
                "Analyze this image and identify any suspicious or anomalous region, if present.{JSON_BOX_FORMAT}"
            ),
            loc_tagged_user: alloc::format!(
                "The video could contain the following anomaly type: '{{tags}}'.\
                 Localize the suspicious region or individual in this image.{JSON_BOX_FORMAT}"
            ),
            vau_system: "You are an AI assistant analyzing a video.".into(),
            vau_user: concat!(
                "Please analyze the video for any anomaly activities in detail. ",
                "If there is any anomaly, describe the anomaly activities present in the video in detail. ",
                "After description, analyze why it is an anomaly without timestamps.",
                "If no anomalies are found, state that the video appears normal and then describe the scene in detail."
            )
            .into(),
            vau_tag_injection: concat!(
                "For better anomaly detection and description in detail, a preliminary analysis ",
                "suggests that the suspicious activity could be related to {tags}. ",
                "Use these information to guide your anomaly detection analysis."
            )
            .into(),
            vau_injection_separator: " ".into(),
        }
    }
}

impl Templates {
    /// Mutable access by override-file stem.
    pub fn slot_mut(&mut self, name: &str) -> Option<&mut String> {
        Some(match name {
            "caption_system" => &mut self.caption_system,
            "vad_system_head" => &mut self.vad_system_head,
            "vad_system_tail" => &mut self.vad_system_tail,
            "vad_user" => &mut self.vad_user,
            "vad_tag_injection" => &mut self.vad_tag_injection,
            "extract_system" => &mut self.extract_system,
            "extract_user" => &mut self.extract_user,
            "loc_user" => &mut self.loc_user,
            "loc_tagged_user" => &mut self.loc_tagged_user,
            "vau_system" => &mut self.vau_system,
            "vau_user" => &mut self.vau_user,
            "vau_tag_injection" => &mut self.vau_tag_injection,
            "vau_injection_separator" => &mut self.vau_injection_separator,
            _ => return None,
        })
    }

    /// Caption request for one clip; the frames ride on the user message.
    pub fn caption(&self, clip_frames: &[MediaRef]) -> PromptBundle {
        PromptBundle::new(
            PromptKind::Caption,
            Some(self.caption_system.clone()),
            String::new(),
            clip_frames.to_vec(),
        )
    }

    /// Scoring prompt; a non-empty tag list inserts the injection sentence
    /// between the two system-prompt parts.
    pub fn vad(&self, dataset_prior: &str, caption: &str, tags: Option<&TagList>) -> PromptBundle {
        let joined = nonempty(tags).map(TagList::joined);
        let tag_text = joined.as_deref().unwrap_or("");
        let mut system = fill(&self.vad_system_head, dataset_prior, tag_text, "");
        if joined.is_some() {
            system.push_str(&fill(&self.vad_tag_injection, dataset_prior, tag_text, ""));
        }
        system.push_str(&fill(&self.vad_system_tail, dataset_prior, tag_text, ""));
        let user = fill(&self.vad_user, dataset_prior, tag_text, caption);
        PromptBundle::new(PromptKind::Vad, Some(system), user, Vec::new())
    }

    pub fn extract(&self, frames: &[MediaRef]) -> PromptBundle {
        PromptBundle::new(
            PromptKind::Extract,
            Some(self.extract_system.clone()),
            self.extract_user.clone(),
            frames.to_vec(),
        )
    }

    pub fn loc(&self, frame: &MediaRef, tags: Option<&TagList>) -> PromptBundle {
        let text = match nonempty(tags) {
            Some(t) => fill(&self.loc_tagged_user, "", &t.joined(), ""),
            None => fill(&self.loc_user, "", "", ""),
        };
        PromptBundle::new(PromptKind::Loc, None, text, alloc::vec![frame.clone()])
    }

    pub fn vau(&self, frames: &[MediaRef], tags: Option<&TagList>) -> PromptBundle {
        let mut system = self.vau_system.clone();
        if let Some(t) = nonempty(tags) {
            system.push_str(&self.vau_injection_separator);
            system.push_str(&fill(&self.vau_tag_injection, "", &t.joined(), ""));
        }
        PromptBundle::new(
            PromptKind::Vau,
            Some(system),
            self.vau_user.clone(),
            frames.to_vec(),
        )
    }
}
