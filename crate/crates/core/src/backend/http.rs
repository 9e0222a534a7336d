//! HTTP bindings: an OpenAI-compatible chat endpoint and a JSON VQA endpoint.
//!
//! VQA protocol: `POST {endpoint}` with
//! `{"model", "task": "vqa"|"caption", "image", "image_encoding": "url"|"base64", "question", "prompt"}`
//! and a `{"answer": "..."}` response. Local image files are sent base64
//! encoded, anything else is passed through as a URL.

use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};
use ureq::Agent;

use super::retry::RetryPolicy;
use super::{network, BackendError, ChatBackend, ChatRequest, VisionBackend, VqaRequest};
use crate::types::Role;

const TIMEOUT: Duration = Duration::from_secs(120);

fn agent() -> Agent {
    Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(TIMEOUT))
        .build()
        .into()
}

fn redact(body: &str) -> String {
    body.chars().take(300).collect()
}

/// One POST with status classification; no retries.
fn post_once(agent: &Agent, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, BackendError> {
    if !network::begin_request() {
        return Err(BackendError::Fatal(format!(
            "network access denied ({}=1)",
            network::DENY_ENV
        )));
    }
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let mut resp = req
        .send_json(body)
        .map_err(|e| BackendError::Transient(format!("{url}: {e}")))?;
    let status = resp.status().as_u16();
    if status == 429 || status >= 500 {
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(BackendError::Transient(format!("{url}: HTTP {status}: {}", redact(&text))));
    }
    if status >= 400 {
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(BackendError::Fatal(format!("{url}: HTTP {status}: {}", redact(&text))));
    }
    resp.body_mut()
        .read_json::<Value>()
        .map_err(|e| BackendError::Fatal(format!("{url}: malformed response body: {e}")))
}

pub struct HttpChat {
    endpoint: String,
    model_id: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: Agent,
}

impl HttpChat {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>, api_key: Option<String>) -> Self {
        HttpChat {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model_id: model_id.into(),
            api_key,
            retry: RetryPolicy::default(),
            agent: agent(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl ChatBackend for HttpChat {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, _role: Role, req: &ChatRequest) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.endpoint);
        let body = json!({
            "model": self.model_id,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let value = self.retry.run(std::thread::sleep, |_| {
            post_once(&self.agent, &url, self.api_key.as_deref(), &body)
        })?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal(format!("{url}: response has no choices[0].message.content")))
    }
}

pub struct HttpVqa {
    endpoint: String,
    model_id: String,
    api_key: Option<String>,
    images_root: Option<std::path::PathBuf>,
    retry: RetryPolicy,
    agent: Agent,
}

impl HttpVqa {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>, api_key: Option<String>) -> Self {
        HttpVqa {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            api_key,
            images_root: None,
            retry: RetryPolicy::default(),
            agent: agent(),
        }
    }

    /// Relative image refs are resolved against this directory.
    pub fn with_images_root(mut self, root: impl Into<std::path::PathBuf>) -> Self {
        self.images_root = Some(root.into());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn encode_image(&self, image_ref: &str) -> Result<(String, &'static str), BackendError> {
        if image_ref.contains("://") {
            return Ok((image_ref.to_string(), "url"));
        }
        let path = match &self.images_root {
            Some(root) if Path::new(image_ref).is_relative() => root.join(image_ref),
            _ => Path::new(image_ref).to_path_buf(),
        };
        let bytes = std::fs::read(&path).map_err(|_| BackendError::ImageNotFound(path.display().to_string()))?;
        Ok((base64::engine::general_purpose::STANDARD.encode(bytes), "base64"))
    }

    fn call(&self, task: &str, image_ref: &str, question: &str, prompt: &str) -> Result<String, BackendError> {
        let (image, encoding) = self.encode_image(image_ref)?;
        let body = json!({
            "model": self.model_id,
            "task": task,
            "image": image,
            "image_encoding": encoding,
            "question": question,
            "prompt": prompt,
        });
        let value = self.retry.run(std::thread::sleep, |_| {
            post_once(&self.agent, &self.endpoint, self.api_key.as_deref(), &body)
        })?;
        value
            .get("answer")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal(format!("{}: response has no answer field", self.endpoint)))
    }
}

impl VisionBackend for HttpVqa {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn answer(&self, req: &VqaRequest) -> Result<String, BackendError> {
        self.call("vqa", &req.image_ref, &req.question, &req.prompt)
    }

    fn caption(&self, image_ref: &str, prompt: &str) -> Result<String, BackendError> {
        self.call("caption", image_ref, "", prompt)
    }
}
