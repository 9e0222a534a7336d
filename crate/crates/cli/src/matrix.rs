//! Ablation matrix files.
//!
//! ```toml
//! base_config = "run.toml"
//! manifest = "manifest.toml"
//! baseline = "max4"
//!
//! [[config]]
//! label = "max1"
//! max_iterations = 1
//!
//! [[config]]
//! label = "max4"
//! max_iterations = 4
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use idealgpt_core::backend::{BackendBinding, BackendProfile};
use idealgpt_core::RunConfig;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("cannot read matrix {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("invalid matrix: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEntry {
    pub label: String,
    #[serde(default)]
    pub max_iterations: Option<u32>,
    #[serde(default)]
    pub answerer: Option<BackendBinding>,
    #[serde(default)]
    pub captioner: Option<BackendBinding>,
}

impl MatrixEntry {
    fn overrides(&self) -> (Option<u32>, Option<&BackendBinding>, Option<&BackendBinding>) {
        (self.max_iterations, self.answerer.as_ref(), self.captioner.as_ref())
    }

    pub fn apply(&self, config: &RunConfig, profile: &BackendProfile) -> (RunConfig, BackendProfile) {
        let mut config = config.clone();
        let mut profile = profile.clone();
        if let Some(m) = self.max_iterations {
            config.max_iterations = m;
        }
        if let Some(b) = &self.answerer {
            profile.answerer = b.clone();
        }
        if let Some(b) = &self.captioner {
            profile.captioner = b.clone();
        }
        (config, profile)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub base_config: PathBuf,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(rename = "config", default)]
    pub configs: Vec<MatrixEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Matrix {
    pub fn load(path: &Path) -> Result<Self, MatrixError> {
        let text = std::fs::read_to_string(path).map_err(|e| MatrixError::Io(path.to_path_buf(), e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, MatrixError> {
        let mut m: Matrix = toml::from_str(text).map_err(|e| MatrixError::Invalid(e.to_string()))?;
        m.base_dir = base_dir.to_path_buf();
        for entry in &mut m.configs {
            for b in [&mut entry.answerer, &mut entry.captioner].into_iter().flatten() {
                anchor_paths(b, base_dir);
            }
        }
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), MatrixError> {
        let invalid = |m: String| Err(MatrixError::Invalid(m));
        if self.configs.len() < 2 {
            return invalid(format!("need at least 2 configurations, found {}", self.configs.len()));
        }
        let mut labels = HashSet::new();
        for e in &self.configs {
            if e.label.trim().is_empty() {
                return invalid("configuration labels must be non-empty".into());
            }
            if !labels.insert(e.label.as_str()) {
                return invalid(format!("duplicate label {:?}", e.label));
            }
            if e.max_iterations == Some(0) {
                return invalid(format!("{}: max_iterations must be positive", e.label));
            }
        }
        for (i, a) in self.configs.iter().enumerate() {
            if let Some(b) = self.configs[i + 1..].iter().find(|b| b.overrides() == a.overrides()) {
                return invalid(format!("{:?} and {:?} declare identical settings", a.label, b.label));
            }
        }
        if let Some(b) = &self.baseline {
            if !labels.contains(b.as_str()) {
                return invalid(format!("baseline {b:?} is not a configuration label"));
            }
        }
        Ok(())
    }

    pub fn baseline(&self) -> &str {
        self.baseline.as_deref().unwrap_or(&self.configs[0].label)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }
}

/// Makes relative file paths in a binding absolute against `dir`.
fn anchor_paths(binding: &mut BackendBinding, dir: &Path) {
    let anchor = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    };
    match binding {
        BackendBinding::Scripted { fixture } => anchor(fixture),
        BackendBinding::Replay { cassette, .. } => anchor(cassette),
        BackendBinding::Oracle { world: Some(w), .. } => anchor(w),
        _ => {}
    }
}
