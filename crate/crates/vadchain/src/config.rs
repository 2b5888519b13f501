use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vadchain_core::score::WindowRule;
use vadchain_core::{MarginMode, SmoothingConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Vad,
    Val,
    Vau,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Vad => "vad",
            Stage::Val => "val",
            Stage::Vau => "vau",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vad" => Ok(Stage::Vad),
            "val" => Ok(Stage::Val),
            "vau" => Ok(Stage::Vau),
            other => Err(ConfigError::Invalid(format!("unknown stage `{other}`"))),
        }
    }
}

/// One model server. Several roles may share a server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_parallel: usize,
    pub retry_backoff_ms: u64,
    pub temperature: f64,
    /// Servers that reject a system role get it folded into the user turn.
    pub system_role: bool,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: String::new(),
            api_key_env: None,
            timeout_secs: 120.0,
            max_retries: 2,
            max_parallel: 4,
            retry_backoff_ms: 500,
            temperature: 0.0,
            system_role: true,
        }
    }
}

impl EndpointConfig {
    pub fn for_model(model: &str) -> Self {
        Self {
            model: model.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self, role: &str) -> Result<(), ConfigError> {
        if self.max_parallel == 0 {
            return Err(ConfigError::Invalid(format!("endpoints.{role}.max_parallel must be >= 1")));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(ConfigError::Invalid(format!("endpoints.{role}.timeout_secs must be > 0")));
        }
        if self.model.is_empty() {
            return Err(ConfigError::Invalid(format!("endpoints.{role}.model is empty")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointRole {
    Captioner,
    Scorer,
    Tagger,
    Localizer,
    Describer,
}

impl EndpointRole {
    pub const ALL: [EndpointRole; 5] = [
        EndpointRole::Captioner,
        EndpointRole::Scorer,
        EndpointRole::Tagger,
        EndpointRole::Localizer,
        EndpointRole::Describer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EndpointRole::Captioner => "captioner",
            EndpointRole::Scorer => "scorer",
            EndpointRole::Tagger => "tagger",
            EndpointRole::Localizer => "localizer",
            EndpointRole::Describer => "describer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub captioner: EndpointConfig,
    pub scorer: EndpointConfig,
    pub tagger: EndpointConfig,
    pub localizer: EndpointConfig,
    pub describer: EndpointConfig,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            captioner: EndpointConfig::for_model("VideoLLaMA3-7B"),
            scorer: EndpointConfig::for_model("Llama-3.1-8B-Instruct"),
            tagger: EndpointConfig::for_model("VideoLLaMA3-7B"),
            localizer: EndpointConfig::for_model("Qwen2.5-VL-7B-Instruct"),
            describer: EndpointConfig::for_model("VideoLLaMA3-7B"),
        }
    }
}

impl Endpoints {
    pub fn get(&self, role: EndpointRole) -> &EndpointConfig {
        match role {
            EndpointRole::Captioner => &self.captioner,
            EndpointRole::Scorer => &self.scorer,
            EndpointRole::Tagger => &self.tagger,
            EndpointRole::Localizer => &self.localizer,
            EndpointRole::Describer => &self.describer,
        }
    }

    pub fn get_mut(&mut self, role: EndpointRole) -> &mut EndpointConfig {
        match role {
            EndpointRole::Captioner => &mut self.captioner,
            EndpointRole::Scorer => &mut self.scorer,
            EndpointRole::Tagger => &mut self.tagger,
            EndpointRole::Localizer => &mut self.localizer,
            EndpointRole::Describer => &mut self.describer,
        }
    }
}

/// Frames handed to the captioner per scored position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    /// Seconds of context on each side of the position's centre frame.
    pub radius_seconds: f64,
    pub frames: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            radius_seconds: 10.0,
            frames: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub stages: BTreeSet<Stage>,
    pub stride: usize,
    pub margin: MarginMode,
    pub window: WindowRule,
    pub smoothing: SmoothingConfig,
    pub clip: ClipConfig,
    pub tag_cap: usize,
    pub window_subsample_cap: usize,
    pub vau_sample_count: usize,
    /// Overrides every manifest entry's preset when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_prior_preset: Option<String>,
    pub overlay: bool,
    /// Recompute the video label from the refined series instead of the
    /// first pass.
    pub relabel_from_refined: bool,
    pub strict_parsing: bool,
    pub workers: usize,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    /// Spatial ground truth; its frames are the ones localized by `val`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_annotations: Option<PathBuf>,
    /// Replaces every endpoint with the scripted mock backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    pub endpoints: Endpoints,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            stages: [Stage::Vad].into_iter().collect(),
            stride: 16,
            margin: MarginMode::default(),
            window: WindowRule::default(),
            smoothing: SmoothingConfig::default(),
            clip: ClipConfig::default(),
            tag_cap: vadchain_core::prompt::DEFAULT_TAG_CAP,
            window_subsample_cap: 180,
            vau_sample_count: 16,
            dataset_prior_preset: None,
            overlay: true,
            relabel_from_refined: false,
            strict_parsing: false,
            workers: 4,
            cache_dir: PathBuf::from("cache"),
            out_dir: PathBuf::from("out"),
            template_dir: None,
            val_annotations: None,
            mock_script: None,
            endpoints: Endpoints::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.stride == 0 {
            return invalid("stride must be >= 1");
        }
        if let MarginMode::Fixed(m) = self.margin {
            if !(0.0..=0.5).contains(&m) {
                return invalid("fixed margin must lie in [0, 0.5]");
            }
        }
        if self.window.divisor == 0 {
            return invalid("window.divisor must be >= 1");
        }
        self.smoothing
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("smoothing: {e}")))?;
        if self.clip.frames == 0 || self.clip.radius_seconds.is_nan() || self.clip.radius_seconds < 0.0 {
            return invalid("clip needs frames >= 1 and a non-negative radius");
        }
        if self.window_subsample_cap == 0 || self.vau_sample_count == 0 || self.tag_cap == 0 {
            return invalid("tag_cap, window_subsample_cap and vau_sample_count must be >= 1");
        }
        if self.workers == 0 {
            return invalid("workers must be >= 1");
        }
        if self.stages.is_empty() {
            return invalid("no stages requested");
        }
        if let Some(p) = &self.dataset_prior_preset {
            if vadchain_core::prompt::dataset_prior(p).is_none() {
                return Err(ConfigError::Invalid(format!("unknown dataset prior preset `{p}`")));
            }
        }
        for role in EndpointRole::ALL {
            self.endpoints.get(role).validate(role.as_str())?;
        }
        Ok(())
    }
}
