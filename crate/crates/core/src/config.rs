//! Run configuration, read from TOML.
//!
//! ```toml
//! max_iterations = 4
//! temperature = 0.0
//! sample_size = 5000
//! sample_seed = 0
//! concurrency_limit = 8
//! backend_profile = "profiles/live.toml"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendProfile};
use crate::parse::{UnsureDetector, DEFAULT_MAX_SUBQUESTIONS, DEFAULT_UNSURE_PHRASE};
use crate::prompt::{PromptError, PromptSet};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn default_max_iterations() -> u32 {
    4
}
fn default_concurrency() -> usize {
    4
}
fn default_max_subquestions() -> usize {
    DEFAULT_MAX_SUBQUESTIONS
}
fn default_unsure_phrases() -> Vec<String> {
    vec![DEFAULT_UNSURE_PHRASE.to_string()]
}
fn default_true() -> bool {
    true
}
fn default_max_output_tokens() -> u32 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default)]
    pub sample_seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
    #[serde(default = "default_max_subquestions")]
    pub max_subquestions: usize,
    #[serde(default = "default_unsure_phrases")]
    pub unsure_phrases: Vec<String>,
    /// Template directory overriding the built-in prompts file by file.
    #[serde(default)]
    pub prompt_set: Option<PathBuf>,
    /// Zero every call timing when false, making transcripts reproducible
    /// byte for byte.
    #[serde(default = "default_true")]
    pub record_timings: bool,
    /// Answer the sub-questions of one round concurrently.
    #[serde(default = "default_true")]
    pub parallel_subanswers: bool,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    /// Path to a profile TOML file.
    #[serde(default)]
    pub backend_profile: Option<PathBuf>,
    /// Inline profile; takes precedence over `backend_profile`.
    #[serde(default)]
    pub profile: Option<BackendProfile>,
    /// Directory relative paths in this config are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_iterations: default_max_iterations(),
            temperature: 0.0,
            sample_size: None,
            sample_seed: 0,
            concurrency_limit: default_concurrency(),
            max_subquestions: default_max_subquestions(),
            unsure_phrases: default_unsure_phrases(),
            prompt_set: None,
            record_timings: true,
            parallel_subanswers: true,
            max_output_tokens: default_max_output_tokens(),
            backend_profile: None,
            profile: None,
            base_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.max_iterations == 0 {
            return invalid("max_iterations must be positive");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return invalid("temperature must be a finite number >= 0");
        }
        if self.sample_size == Some(0) {
            return invalid("sample_size must be positive");
        }
        if self.concurrency_limit == 0 {
            return invalid("concurrency_limit must be positive");
        }
        if self.max_subquestions == 0 {
            return invalid("max_subquestions must be positive");
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive");
        }
        if self.unsure_phrases.iter().all(|p| p.trim().is_empty()) {
            return invalid("unsure_phrases must contain a non-empty phrase");
        }
        if let Some(p) = &self.profile {
            p.validate()?;
        }
        Ok(())
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// The inline profile, or the one in `backend_profile`. Relative paths
    /// inside a profile file resolve against that file's directory, which is
    /// returned alongside.
    pub fn load_profile(&self) -> Result<(BackendProfile, Option<PathBuf>), ConfigError> {
        if let Some(p) = &self.profile {
            return Ok((p.clone(), self.base_dir.clone()));
        }
        let Some(rel) = &self.backend_profile else {
            return Err(ConfigError::Invalid(
                "no backend profile: set `backend_profile` or an inline [profile]".into(),
            ));
        };
        let path = self.resolve_path(rel);
        let profile = load_profile_file(&path)?;
        Ok((profile, path.parent().map(Path::to_path_buf)))
    }

    pub fn prompts(&self) -> Result<PromptSet, ConfigError> {
        match &self.prompt_set {
            Some(dir) => Ok(PromptSet::load_dir(&self.resolve_path(dir))?),
            None => Ok(PromptSet::builtin()),
        }
    }

    pub fn unsure_detector(&self) -> UnsureDetector {
        UnsureDetector::new(&self.unsure_phrases)
    }
}

pub fn load_profile_file(path: &Path) -> Result<BackendProfile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let profile: BackendProfile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    profile.validate()?;
    Ok(profile)
}
