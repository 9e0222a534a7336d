//! Role backends: chat completion for the questioner and reasoner, visual
//! question answering and captioning for the vision model.
//!
//! Every binding implements [`ChatBackend`] or [`VisionBackend`]. The
//! [`Backends`] bundle adds what the engine needs on top: per-role call
//! counters, a per-image caption cache with single-flight semantics and the
//! fingerprint that identifies the models used for a run.

mod cassette;
#[cfg(feature = "http")]
pub mod http;
mod profile;
pub mod retry;
mod scripted;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{Cassette, CassetteEntry, CassetteMode, RecordingChat, RecordingVision, ReplayChat, ReplayVision};
pub use profile::{BackendBinding, BackendProfile, ResolveOptions};
pub use scripted::{FnChat, FnVision, Matcher, ScriptedChat, ScriptedVision};

use crate::types::Role;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Network failures, 429 and 5xx. Retried with backoff.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// Authentication and other client errors. Never retried.
    #[error("fatal backend failure: {0}")]
    Fatal(String),
    #[error("cassette has no entry for {role} request {fingerprint}")]
    CassetteMiss { role: Role, fingerprint: String },
    #[error("image not found: {0}")]
    ImageNotFound(String),
    #[error("binding for {role} cannot serve that role: {detail}")]
    NotCapable { role: Role, detail: String },
    #[error("credential environment variable {0} is not set")]
    CredentialMissing(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub model_id: String,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn user(model_id: impl Into<String>, prompt: impl Into<String>, temperature: f64) -> Self {
        ChatRequest {
            messages: vec![ChatMessage {
                role: MessageRole::User,
                content: prompt.into(),
            }],
            temperature,
            model_id: model_id.into(),
            max_output_tokens: 512,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.messages.iter().any(|m| m.role == MessageRole::User) {
            return Err(BackendError::Config("chat request has no user message".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::Config("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// The content of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == MessageRole::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Cassette key over role, model, full message list and temperature.
    pub fn fingerprint(&self, role: Role) -> String {
        fingerprint(&json!({
            "role": role,
            "model_id": self.model_id,
            "messages": self.messages,
            "temperature": self.temperature,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VqaRequest {
    pub image_ref: String,
    /// The bare sub-question.
    pub question: String,
    /// The sub-question rendered through the answerer template.
    pub prompt: String,
}

impl VqaRequest {
    pub fn fingerprint(&self, role: Role, model_id: &str) -> String {
        fingerprint(&json!({
            "role": role,
            "model_id": model_id,
            "image": self.image_ref,
            "question": self.question,
            "prompt": self.prompt,
        }))
    }
}

pub(crate) fn caption_fingerprint(model_id: &str, image_ref: &str, prompt: &str) -> String {
    fingerprint(&json!({
        "role": Role::Captioner,
        "model_id": model_id,
        "image": image_ref,
        "prompt": prompt,
    }))
}

/// JSON with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    // written out by hand so the result does not depend on whether
    // serde_json's preserve_order feature is enabled somewhere in the graph
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// SHA-256 over the canonical JSON form, hex encoded.
pub fn fingerprint(normalized: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(normalized).as_bytes()))
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, role: Role, req: &ChatRequest) -> Result<String, BackendError>;
}

pub trait VisionBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn answer(&self, req: &VqaRequest) -> Result<String, BackendError>;
    fn caption(&self, image_ref: &str, prompt: &str) -> Result<String, BackendError>;
}

/// Calls that actually reached a backend, per role.
#[derive(Debug, Default)]
pub struct CallCounters {
    counts: [AtomicU64; 5],
}

impl CallCounters {
    fn slot(role: Role) -> usize {
        Role::ALL.iter().position(|r| *r == role).unwrap_or(0)
    }

    pub fn bump(&self, role: Role) {
        self.counts[Self::slot(role)].fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self, role: Role) -> u64 {
        self.counts[Self::slot(role)].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        Role::ALL.iter().map(|r| self.get(*r)).sum()
    }

    pub fn snapshot(&self) -> BTreeMap<Role, u64> {
        Role::ALL.iter().map(|r| (*r, self.get(*r))).collect()
    }
}

type CaptionSlot = Arc<OnceLock<Result<String, BackendError>>>;

/// The four role bindings of a run.
pub struct Backends {
    questioner: Arc<dyn ChatBackend>,
    reasoner: Arc<dyn ChatBackend>,
    answerer: Arc<dyn VisionBackend>,
    captioner: Arc<dyn VisionBackend>,
    captions: Mutex<HashMap<(String, String), CaptionSlot>>,
    counters: CallCounters,
}

impl Backends {
    pub fn new(
        questioner: Arc<dyn ChatBackend>,
        reasoner: Arc<dyn ChatBackend>,
        answerer: Arc<dyn VisionBackend>,
        captioner: Arc<dyn VisionBackend>,
    ) -> Self {
        Backends {
            questioner,
            reasoner,
            answerer,
            captioner,
            captions: Mutex::new(HashMap::new()),
            counters: CallCounters::default(),
        }
    }

    /// One chat model for questioner and reasoner, one vision model for
    /// answerer and captioner.
    pub fn paired(chat: Arc<dyn ChatBackend>, vision: Arc<dyn VisionBackend>) -> Self {
        Self::new(chat.clone(), chat, vision.clone(), vision)
    }

    pub fn counters(&self) -> &CallCounters {
        &self.counters
    }

    fn chat_for(&self, role: Role) -> Result<&Arc<dyn ChatBackend>, BackendError> {
        match role {
            Role::Questioner => Ok(&self.questioner),
            Role::Reasoner | Role::Finalizer => Ok(&self.reasoner),
            _ => Err(BackendError::NotCapable {
                role,
                detail: "not a chat role".into(),
            }),
        }
    }

    pub fn chat_model(&self, role: Role) -> &str {
        self.chat_for(role).map(|b| b.model_id()).unwrap_or("")
    }

    /// Builds a single-user-message request addressed to the role's model.
    pub fn chat_request(&self, role: Role, prompt: impl Into<String>, temperature: f64) -> ChatRequest {
        ChatRequest::user(self.chat_model(role), prompt, temperature)
    }

    pub fn chat_complete(&self, role: Role, req: &ChatRequest) -> Result<String, BackendError> {
        let backend = self.chat_for(role)?;
        req.validate()?;
        self.counters.bump(role);
        backend.complete(role, req)
    }

    pub fn vqa_answer(&self, req: &VqaRequest) -> Result<String, BackendError> {
        if req.question.trim().is_empty() {
            return Err(BackendError::Config("sub-question is empty".into()));
        }
        self.counters.bump(Role::Answerer);
        self.answerer.answer(req)
    }

    /// Cached per image and prompt for the lifetime of this bundle. Concurrent
    /// callers for the same image wait on one in-flight request.
    pub fn caption(&self, image_ref: &str, prompt: &str) -> Result<String, BackendError> {
        let slot = {
            let mut map = self.captions.lock().unwrap_or_else(|e| e.into_inner());
            map.entry((image_ref.to_string(), prompt.to_string()))
                .or_default()
                .clone()
        };
        slot.get_or_init(|| {
            self.counters.bump(Role::Captioner);
            match self.captioner.caption(image_ref, prompt) {
                Ok(c) if c.trim().is_empty() => {
                    Err(BackendError::Fatal(format!("empty caption for {image_ref}")))
                }
                other => other,
            }
        })
        .clone()
    }

    /// `role=model` pairs for every role, stable across record and replay.
    pub fn fingerprint(&self) -> String {
        format!(
            "questioner={};reasoner={};answerer={};captioner={}",
            self.questioner.model_id(),
            self.reasoner.model_id(),
            self.answerer.model_id(),
            self.captioner.model_id()
        )
    }
}

/// Live HTTP requests attempted by this process, and an off switch.
pub mod network {
    use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

    static LIVE_REQUESTS: AtomicU64 = AtomicU64::new(0);
    static DENY: AtomicBool = AtomicBool::new(false);

    /// Environment variable that, when set to `1`, makes every live request
    /// fail before touching the network.
    pub const DENY_ENV: &str = "IDEALGPT_DENY_NETWORK";

    pub fn live_request_count() -> u64 {
        LIVE_REQUESTS.load(Ordering::SeqCst)
    }

    pub fn set_denied(deny: bool) {
        DENY.store(deny, Ordering::SeqCst);
    }

    pub fn is_denied() -> bool {
        DENY.load(Ordering::SeqCst) || std::env::var(DENY_ENV).is_ok_and(|v| v == "1")
    }

    /// Counts the attempt; returns false if network access is denied.
    pub fn begin_request() -> bool {
        LIVE_REQUESTS.fetch_add(1, Ordering::SeqCst);
        !is_denied()
    }
}
