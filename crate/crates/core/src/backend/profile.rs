//! Declarative role bindings and their resolution into live backends.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{
    Backends, BackendError, Cassette, ChatBackend, RecordingChat, RecordingVision, ReplayChat, ReplayVision,
    ScriptedChat, ScriptedVision, VisionBackend,
};
use crate::sim::{self, OracleWorld, WorldParams};
use crate::types::Role;

fn default_questions_per_round() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendBinding {
    /// OpenAI-compatible chat completions.
    HttpChat {
        endpoint: String,
        model_id: String,
        /// `${ENV_VAR}` reference; literal keys are rejected.
        #[serde(default)]
        api_key: Option<String>,
    },
    HttpVqa {
        endpoint: String,
        model_id: String,
        #[serde(default)]
        api_key: Option<String>,
    },
    /// A chat or vision fixture file, depending on the role.
    Scripted { fixture: PathBuf },
    Replay { cassette: PathBuf, model_id: String },
    /// The synthetic scene-graph world. Serves every role.
    Oracle {
        #[serde(default)]
        world: Option<PathBuf>,
        #[serde(default)]
        generate: Option<WorldParams>,
        #[serde(default)]
        noise_rate: f64,
        #[serde(default = "default_questions_per_round")]
        questions_per_round: usize,
    },
}

impl BackendBinding {
    fn serves(&self, role: Role) -> bool {
        let chat = matches!(role, Role::Questioner | Role::Reasoner | Role::Finalizer);
        match self {
            BackendBinding::HttpChat { .. } => chat,
            BackendBinding::HttpVqa { .. } => !chat,
            _ => true,
        }
    }

    /// Checks everything that can be checked without touching the network or
    /// the environment.
    pub fn validate(&self, role: Role) -> Result<(), BackendError> {
        if !self.serves(role) {
            return Err(BackendError::NotCapable {
                role,
                detail: format!("{} bindings serve other roles", self.kind()),
            });
        }
        match self {
            BackendBinding::HttpChat { api_key, endpoint, .. } | BackendBinding::HttpVqa { api_key, endpoint, .. } => {
                if endpoint.trim().is_empty() {
                    return Err(BackendError::Config(format!("{role}: endpoint is empty")));
                }
                if let Some(key) = api_key {
                    credential_var(key)?;
                }
            }
            BackendBinding::Oracle {
                world,
                generate,
                noise_rate,
                questions_per_round,
            } => {
                if world.is_some() == generate.is_some() {
                    return Err(BackendError::Config(format!(
                        "{role}: oracle binding needs exactly one of `world` or `generate`"
                    )));
                }
                if !(0.0..=1.0).contains(noise_rate) {
                    return Err(BackendError::Config(format!("{role}: noise_rate must lie in [0, 1]")));
                }
                if *questions_per_round == 0 {
                    return Err(BackendError::Config(format!("{role}: questions_per_round must be positive")));
                }
            }
            BackendBinding::Scripted { .. } | BackendBinding::Replay { .. } => {}
        }
        Ok(())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BackendBinding::HttpChat { .. } => "http_chat",
            BackendBinding::HttpVqa { .. } => "http_vqa",
            BackendBinding::Scripted { .. } => "scripted",
            BackendBinding::Replay { .. } => "replay",
            BackendBinding::Oracle { .. } => "oracle",
        }
    }

    pub fn is_live(&self) -> bool {
        matches!(self, BackendBinding::HttpChat { .. } | BackendBinding::HttpVqa { .. })
    }
}

static ENV_REF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$").unwrap());

/// The variable name in a `${VAR}` credential reference.
pub fn credential_var(reference: &str) -> Result<&str, BackendError> {
    ENV_REF
        .captures(reference.trim())
        .and_then(|c| c.get(1))
        .map(|m| m.as_str())
        .ok_or_else(|| {
            BackendError::Config("api_key must reference an environment variable as ${NAME}; literal keys are not accepted".into())
        })
}

fn resolve_credential(reference: &Option<String>) -> Result<Option<String>, BackendError> {
    let Some(reference) = reference else { return Ok(None) };
    let var = credential_var(reference)?;
    match std::env::var(var) {
        Ok(v) if !v.is_empty() => Ok(Some(v)),
        _ => Err(BackendError::CredentialMissing(var.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendProfile {
    pub questioner: BackendBinding,
    pub reasoner: BackendBinding,
    pub answerer: BackendBinding,
    pub captioner: BackendBinding,
}

#[derive(Default, Clone)]
pub struct ResolveOptions {
    /// Relative fixture, cassette and world paths are resolved against this.
    pub base_dir: Option<PathBuf>,
    /// Relative image paths for HTTP VQA bindings.
    pub images_root: Option<PathBuf>,
    /// Wrap every binding so that its responses are recorded here.
    pub record: Option<Arc<Cassette>>,
}

enum Built {
    Chat(Arc<dyn ChatBackend>),
    Vision(Arc<dyn VisionBackend>),
}

impl BackendProfile {
    /// Every role bound to the same oracle world.
    pub fn oracle(params: WorldParams, noise_rate: f64, questions_per_round: usize) -> Self {
        let b = BackendBinding::Oracle {
            world: None,
            generate: Some(params),
            noise_rate,
            questions_per_round,
        };
        BackendProfile {
            questioner: b.clone(),
            reasoner: b.clone(),
            answerer: b.clone(),
            captioner: b,
        }
    }

    pub fn bindings(&self) -> [(Role, &BackendBinding); 4] {
        [
            (Role::Questioner, &self.questioner),
            (Role::Reasoner, &self.reasoner),
            (Role::Answerer, &self.answerer),
            (Role::Captioner, &self.captioner),
        ]
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        self.bindings().iter().try_for_each(|(role, b)| b.validate(*role))
    }

    pub fn is_offline(&self) -> bool {
        self.bindings().iter().all(|(_, b)| !b.is_live())
    }

    /// Credential variables are checked for every role before any backend is
    /// constructed, so a missing key fails before the first request.
    pub fn resolve(&self, opts: &ResolveOptions) -> Result<Backends, BackendError> {
        self.validate()?;
        for (_, b) in self.bindings() {
            if let BackendBinding::HttpChat { api_key, .. } | BackendBinding::HttpVqa { api_key, .. } = b {
                resolve_credential(api_key)?;
            }
        }
        let mut r = Resolver {
            opts,
            cassettes: HashMap::new(),
            worlds: HashMap::new(),
            built: Vec::new(),
        };
        let questioner = r.chat(Role::Questioner, &self.questioner)?;
        let reasoner = r.chat(Role::Reasoner, &self.reasoner)?;
        let answerer = r.vision(Role::Answerer, &self.answerer)?;
        let captioner = r.vision(Role::Captioner, &self.captioner)?;
        Ok(Backends::new(questioner, reasoner, answerer, captioner))
    }
}

struct Resolver<'a> {
    opts: &'a ResolveOptions,
    cassettes: HashMap<PathBuf, Arc<Cassette>>,
    worlds: HashMap<String, Arc<OracleWorld>>,
    /// Identical bindings resolve to one shared instance.
    built: Vec<(BackendBinding, bool, Built)>,
}

impl Resolver<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.opts.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn cassette(&mut self, p: &Path) -> Result<Arc<Cassette>, BackendError> {
        let path = self.path(p);
        if let Some(c) = self.cassettes.get(&path) {
            return Ok(c.clone());
        }
        let c = Arc::new(Cassette::load(&path)?);
        self.cassettes.insert(path, c.clone());
        Ok(c)
    }

    fn oracle(&mut self, b: &BackendBinding) -> Result<Arc<OracleWorld>, BackendError> {
        let BackendBinding::Oracle {
            world,
            generate,
            noise_rate,
            questions_per_round,
        } = b
        else {
            unreachable!("oracle() called with a non-oracle binding")
        };
        let key = serde_json::to_string(b).unwrap_or_default();
        if let Some(w) = self.worlds.get(&key) {
            return Ok(w.clone());
        }
        let world = match (world, generate) {
            (Some(path), _) => sim::World::load(&self.path(path)),
            (None, Some(params)) => sim::generate_world(params),
            (None, None) => unreachable!("validated"),
        }
        .map_err(|e| BackendError::Config(e.to_string()))?;
        let oracle = Arc::new(OracleWorld::new(Arc::new(world), *noise_rate, *questions_per_round));
        self.worlds.insert(key, oracle.clone());
        Ok(oracle)
    }

    fn cached(&self, b: &BackendBinding, chat: bool) -> Option<&Built> {
        self.built
            .iter()
            .find(|(k, c, _)| k == b && *c == chat)
            .map(|(_, _, built)| built)
    }

    fn chat(&mut self, role: Role, b: &BackendBinding) -> Result<Arc<dyn ChatBackend>, BackendError> {
        if let Some(Built::Chat(c)) = self.cached(b, true) {
            return Ok(c.clone());
        }
        let inner: Arc<dyn ChatBackend> = match b {
            #[cfg(feature = "http")]
            BackendBinding::HttpChat {
                endpoint,
                model_id,
                api_key,
            } => Arc::new(super::http::HttpChat::new(
                endpoint.clone(),
                model_id.clone(),
                resolve_credential(api_key)?,
            )),
            #[cfg(not(feature = "http"))]
            BackendBinding::HttpChat { .. } => {
                return Err(BackendError::Config("built without the `http` feature".into()))
            }
            BackendBinding::Scripted { fixture } => Arc::new(ScriptedChat::load(&self.path(fixture))?),
            BackendBinding::Replay { cassette, model_id } => {
                Arc::new(ReplayChat::new(model_id.clone(), self.cassette(cassette)?))
            }
            BackendBinding::Oracle { .. } => self.oracle(b)?,
            BackendBinding::HttpVqa { .. } => {
                return Err(BackendError::NotCapable {
                    role,
                    detail: "http_vqa is not a chat binding".into(),
                })
            }
        };
        let out: Arc<dyn ChatBackend> = match &self.opts.record {
            Some(c) => Arc::new(RecordingChat::new(inner, c.clone())),
            None => inner,
        };
        self.built.push((b.clone(), true, Built::Chat(out.clone())));
        Ok(out)
    }

    fn vision(&mut self, role: Role, b: &BackendBinding) -> Result<Arc<dyn VisionBackend>, BackendError> {
        if let Some(Built::Vision(v)) = self.cached(b, false) {
            return Ok(v.clone());
        }
        let inner: Arc<dyn VisionBackend> = match b {
            #[cfg(feature = "http")]
            BackendBinding::HttpVqa {
                endpoint,
                model_id,
                api_key,
            } => {
                let mut v = super::http::HttpVqa::new(endpoint.clone(), model_id.clone(), resolve_credential(api_key)?);
                if let Some(root) = &self.opts.images_root {
                    v = v.with_images_root(root.clone());
                }
                Arc::new(v)
            }
            #[cfg(not(feature = "http"))]
            BackendBinding::HttpVqa { .. } => {
                return Err(BackendError::Config("built without the `http` feature".into()))
            }
            BackendBinding::Scripted { fixture } => Arc::new(ScriptedVision::load(&self.path(fixture))?),
            BackendBinding::Replay { cassette, model_id } => {
                Arc::new(ReplayVision::new(model_id.clone(), self.cassette(cassette)?))
            }
            BackendBinding::Oracle { .. } => self.oracle(b)?,
            BackendBinding::HttpChat { .. } => {
                return Err(BackendError::NotCapable {
                    role,
                    detail: "http_chat is not a vision binding".into(),
                })
            }
        };
        let out: Arc<dyn VisionBackend> = match &self.opts.record {
            Some(c) => Arc::new(RecordingVision::new(inner, c.clone())),
            None => inner,
        };
        self.built.push((b.clone(), false, Built::Vision(out.clone())));
        Ok(out)
    }
}
