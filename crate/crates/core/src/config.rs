//! Pipeline configuration, loaded from TOML. Unknown keys are rejected and
//! every validation error names the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::debias::{default_conditional_pairs, default_rules, ConditionalPair, DebiasRule};
use crate::derive::DeriveConfig;
use crate::filter::{AlignmentTemplate, DatasetProfile, DEFAULT_CROP_MARGIN};
use crate::fusion::{DecodeParams, HttpClientConfig, RetryPolicy};
use crate::schema::SourceDataset;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config error at {path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Selects a built-in profile and optionally overrides its fields.
/// `min_face_side_px = 0` disables the resolution rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub name: SourceDataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_face_side_px: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub require_single_face: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub require_real_human: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_text_overlay: Option<bool>,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self::named(SourceDataset::LaionFace)
    }
}

impl ProfileConfig {
    pub fn named(name: SourceDataset) -> Self {
        Self {
            name,
            min_face_side_px: None,
            require_single_face: None,
            require_real_human: None,
            reject_text_overlay: None,
        }
    }

    pub fn resolve(&self) -> DatasetProfile {
        let mut p = DatasetProfile::builtin(self.name);
        if let Some(side) = self.min_face_side_px {
            p.min_face_side_px = (side > 0).then_some(side);
        }
        if let Some(v) = self.require_single_face {
            p.require_single_face = v;
        }
        if let Some(v) = self.require_real_human {
            p.require_real_human = v;
        }
        if let Some(v) = self.reject_text_overlay {
            p.reject_text_overlay = v;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropConfig {
    pub margin: f64,
    /// Also estimate a landmark alignment transform for each crop.
    pub align: bool,
    pub template: AlignmentTemplate,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_CROP_MARGIN,
            align: false,
            template: AlignmentTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DebiasConfig {
    pub rules: Vec<DebiasRule>,
    /// Conditional probabilities reported by `stats`.
    pub report_pairs: Vec<ConditionalPair>,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self {
            rules: default_rules(),
            report_pairs: default_conditional_pairs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mock: bool,
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub token_env: String,
    pub captions_per_image: usize,
    /// Completion requests allowed per image, as a multiple of
    /// `captions_per_image`.
    pub attempt_budget_factor: usize,
    pub decode: DecodeParams,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mock: false,
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "vicuna-13b-v1.5".into(),
            token_env: "FACECAP_LLM_TOKEN".into(),
            captions_per_image: 3,
            attempt_budget_factor: 3,
            decode: DecodeParams::default(),
            retry: RetryPolicy::default(),
            timeout_secs: 120,
            max_in_flight: 8,
        }
    }
}

impl FusionConfig {
    pub fn attempt_budget(&self) -> usize {
        self.attempt_budget_factor * self.captions_per_image
    }

    /// Client settings, with the token read from the environment.
    pub fn http_client_config(&self) -> HttpClientConfig {
        HttpClientConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            token: std::env::var(&self.token_env).ok().filter(|t| !t.is_empty()),
            decode: self.decode,
            retry: self.retry,
            timeout_secs: self.timeout_secs,
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub shard_size: usize,
    /// Image path stored in each entry, relative to the manifest root.
    /// `{image_id}` is replaced by the record's id.
    pub image_path_template: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            shard_size: 10_000,
            image_path_template: "images/{image_id}".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub global_seed: u64,
    /// Worker threads for record-level processing.
    pub concurrency: usize,
    pub profile: ProfileConfig,
    pub crop: CropConfig,
    pub derive: DeriveConfig,
    pub debias: DebiasConfig,
    pub fusion: FusionConfig,
    pub output: OutputConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            global_seed: 0,
            concurrency: 8,
            profile: ProfileConfig::default(),
            crop: CropConfig::default(),
            derive: DeriveConfig::default(),
            debias: DebiasConfig::default(),
            fusion: FusionConfig::default(),
            output: OutputConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| ConfigError::at("<root>", e.to_string()))?;
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|err| {
            let path = err.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            ConfigError::at(path, err.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at("<file>", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.concurrency == 0 {
            return Err(ConfigError::at("concurrency", "must be at least 1"));
        }
        if !(self.crop.margin.is_finite() && self.crop.margin >= 1.0) {
            return Err(ConfigError::at("crop.margin", "must be >= 1"));
        }
        if self.crop.template.size == 0 {
            return Err(ConfigError::at("crop.template.size", "must be positive"));
        }
        self.derive
            .validate()
            .map_err(|(field, msg)| ConfigError::at(format!("derive.{field}"), msg))?;
        for (i, rule) in self.debias.rules.iter().enumerate() {
            rule.validate()
                .map_err(|msg| ConfigError::at(format!("debias.rules[{i}]"), msg))?;
        }
        let f = &self.fusion;
        if f.captions_per_image == 0 {
            return Err(ConfigError::at("fusion.captions_per_image", "must be at least 1"));
        }
        if f.attempt_budget_factor == 0 {
            return Err(ConfigError::at("fusion.attempt_budget_factor", "must be at least 1"));
        }
        if f.max_in_flight == 0 {
            return Err(ConfigError::at("fusion.max_in_flight", "must be at least 1"));
        }
        if !(f.decode.temperature.is_finite() && f.decode.temperature >= 0.0) {
            return Err(ConfigError::at("fusion.decode.temperature", "must be >= 0"));
        }
        if !f.mock && f.endpoint.trim().is_empty() {
            return Err(ConfigError::at("fusion.endpoint", "required unless mock = true"));
        }
        if self.output.shard_size == 0 {
            return Err(ConfigError::at("output.shard_size", "must be at least 1"));
        }
        if !self.output.image_path_template.contains("{image_id}") {
            return Err(ConfigError::at(
                "output.image_path_template",
                "must contain `{image_id}`",
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config always serializes")
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn config_hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
