//! Backends driven by fixtures or closures, for tests and offline runs.
//!
//! Chat fixture:
//!
//! ```json
//! {"model_id": "script",
//!  "rules": [{"match": {"contains": "Sub-question"}, "role": "reasoner",
//!             "responses": ["We are not sure.", "Answer: 2"]}],
//!  "default": "1. What is happening?"}
//! ```
//!
//! Rules are tried in order and the first match wins. A rule with several
//! responses serves them in sequence and then repeats the last one.
//!
//! Vision fixture:
//!
//! ```json
//! {"model_id": "vqa-script",
//!  "images": {"img1.jpg": {"caption": "two people at a table",
//!                          "answers": {"what are they doing?": "eating"},
//!                          "default_answer": "yes"}}}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{prompt_hash, BackendError, ChatBackend, ChatRequest, VisionBackend, VqaRequest};
use crate::types::Role;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Exact(String),
    PromptHash(String),
    Contains(String),
}

impl Matcher {
    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Exact(s) => prompt == s,
            Matcher::PromptHash(h) => prompt_hash(prompt).eq_ignore_ascii_case(h),
            Matcher::Contains(s) => prompt.contains(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRule {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    #[serde(default)]
    pub role: Option<Role>,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatFixture {
    pub model_id: String,
    #[serde(default)]
    pub rules: Vec<ChatRule>,
    #[serde(default)]
    pub default: Option<String>,
}

struct CompiledRule {
    matcher: Matcher,
    role: Option<Role>,
    responses: Vec<String>,
    served: AtomicUsize,
}

pub struct ScriptedChat {
    model_id: String,
    rules: Vec<CompiledRule>,
    default: Option<String>,
}

impl ScriptedChat {
    pub fn new(model_id: impl Into<String>) -> Self {
        ScriptedChat {
            model_id: model_id.into(),
            rules: Vec::new(),
            default: None,
        }
    }

    pub fn rule(mut self, matcher: Matcher, role: Option<Role>, responses: &[&str]) -> Self {
        self.rules.push(CompiledRule {
            matcher,
            role,
            responses: responses.iter().map(|s| s.to_string()).collect(),
            served: AtomicUsize::new(0),
        });
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }

    pub fn from_fixture(fixture: ChatFixture) -> Result<Self, BackendError> {
        let mut out = ScriptedChat::new(fixture.model_id);
        out.default = fixture.default;
        for (i, rule) in fixture.rules.into_iter().enumerate() {
            let mut responses = rule.responses;
            if let Some(r) = rule.response {
                responses.insert(0, r);
            }
            if responses.is_empty() {
                return Err(BackendError::Config(format!("chat fixture rule {i} has no response")));
            }
            out.rules.push(CompiledRule {
                matcher: rule.matcher,
                role: rule.role,
                responses,
                served: AtomicUsize::new(0),
            });
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("fixture {}: {e}", path.display())))?;
        let fixture: ChatFixture = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("fixture {}: {e}", path.display())))?;
        Self::from_fixture(fixture)
    }
}

impl ChatBackend for ScriptedChat {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, role: Role, req: &ChatRequest) -> Result<String, BackendError> {
        let prompt = req.prompt();
        let hit = self
            .rules
            .iter()
            .find(|r| r.role.is_none_or(|want| want == role) && r.matcher.matches(prompt));
        match hit {
            Some(rule) => {
                let n = rule.served.fetch_add(1, Ordering::SeqCst);
                let idx = n.min(rule.responses.len() - 1);
                Ok(rule.responses[idx].clone())
            }
            None => self.default.clone().ok_or_else(|| {
                BackendError::Fatal(format!(
                    "no scripted {role} response for prompt hash {}",
                    prompt_hash(prompt)
                ))
            }),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageScript {
    pub caption: String,
    /// Keyed by the sub-question, compared trimmed and case-insensitively.
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
    #[serde(default)]
    pub default_answer: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisionFixture {
    pub model_id: String,
    #[serde(default)]
    pub images: BTreeMap<String, ImageScript>,
}

pub struct ScriptedVision {
    model_id: String,
    images: BTreeMap<String, ImageScript>,
}

fn question_key(q: &str) -> String {
    q.trim().to_lowercase()
}

impl ScriptedVision {
    pub fn from_fixture(fixture: VisionFixture) -> Self {
        let images = fixture
            .images
            .into_iter()
            .map(|(k, mut v)| {
                v.answers = v.answers.into_iter().map(|(q, a)| (question_key(&q), a)).collect();
                (k, v)
            })
            .collect();
        ScriptedVision {
            model_id: fixture.model_id,
            images,
        }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("fixture {}: {e}", path.display())))?;
        let fixture: VisionFixture = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("fixture {}: {e}", path.display())))?;
        Ok(Self::from_fixture(fixture))
    }

    fn image(&self, image_ref: &str) -> Result<&ImageScript, BackendError> {
        self.images
            .get(image_ref)
            .ok_or_else(|| BackendError::ImageNotFound(image_ref.to_string()))
    }
}

impl VisionBackend for ScriptedVision {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn answer(&self, req: &VqaRequest) -> Result<String, BackendError> {
        let img = self.image(&req.image_ref)?;
        img.answers
            .get(&question_key(&req.question))
            .or(img.default_answer.as_ref())
            .cloned()
            .ok_or_else(|| {
                BackendError::Fatal(format!(
                    "no scripted answer for {:?} on {}",
                    req.question, req.image_ref
                ))
            })
    }

    fn caption(&self, image_ref: &str, _prompt: &str) -> Result<String, BackendError> {
        Ok(self.image(image_ref)?.caption.clone())
    }
}

type ChatFn = dyn Fn(Role, &ChatRequest) -> Result<String, BackendError> + Send + Sync;
type AnswerFn = dyn Fn(&VqaRequest) -> Result<String, BackendError> + Send + Sync;
type CaptionFn = dyn Fn(&str, &str) -> Result<String, BackendError> + Send + Sync;

/// A chat backend backed by a closure.
pub struct FnChat {
    model_id: String,
    f: Box<ChatFn>,
}

impl FnChat {
    pub fn new<F>(model_id: impl Into<String>, f: F) -> Self
    where
        F: Fn(Role, &ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        FnChat {
            model_id: model_id.into(),
            f: Box::new(f),
        }
    }
}

impl ChatBackend for FnChat {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, role: Role, req: &ChatRequest) -> Result<String, BackendError> {
        (self.f)(role, req)
    }
}

/// A vision backend backed by two closures.
pub struct FnVision {
    model_id: String,
    answer: Box<AnswerFn>,
    caption: Box<CaptionFn>,
}

impl FnVision {
    pub fn new<A, C>(model_id: impl Into<String>, answer: A, caption: C) -> Self
    where
        A: Fn(&VqaRequest) -> Result<String, BackendError> + Send + Sync + 'static,
        C: Fn(&str, &str) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        FnVision {
            model_id: model_id.into(),
            answer: Box::new(answer),
            caption: Box::new(caption),
        }
    }
}

impl VisionBackend for FnVision {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn answer(&self, req: &VqaRequest) -> Result<String, BackendError> {
        (self.answer)(req)
    }

    fn caption(&self, image_ref: &str, prompt: &str) -> Result<String, BackendError> {
        (self.caption)(image_ref, prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_match_in_order_and_sequence() {
        let fixture: ChatFixture = serde_json::from_str(
            r#"{"model_id": "s",
                "rules": [
                  {"match": {"contains": "Sub-answer"}, "role": "reasoner",
                   "responses": ["We are not sure yet.", "Answer: 2"]},
                  {"match": {"exact": "hello"}, "response": "hi"}
                ],
                "default": "1. What is it?"}"#,
        )
        .unwrap();
        let chat = ScriptedChat::from_fixture(fixture).unwrap();
        let req = |p: &str| ChatRequest::user("s", p, 0.0);
        assert_eq!(chat.complete(Role::Reasoner, &req("Sub-answer 1: x")).unwrap(), "We are not sure yet.");
        assert_eq!(chat.complete(Role::Reasoner, &req("Sub-answer 1: x")).unwrap(), "Answer: 2");
        assert_eq!(chat.complete(Role::Reasoner, &req("Sub-answer 1: x")).unwrap(), "Answer: 2");
        // role filter
        assert_eq!(chat.complete(Role::Questioner, &req("Sub-answer 1: x")).unwrap(), "1. What is it?");
        assert_eq!(chat.complete(Role::Questioner, &req("hello")).unwrap(), "hi");
    }

    #[test]
    fn prompt_hash_matcher() {
        let chat = ScriptedChat::new("s").rule(Matcher::PromptHash(prompt_hash("abc")), None, &["ok"]);
        assert_eq!(chat.complete(Role::Questioner, &ChatRequest::user("s", "abc", 0.0)).unwrap(), "ok");
        assert!(chat.complete(Role::Questioner, &ChatRequest::user("s", "abd", 0.0)).is_err());
    }

    #[test]
    fn rule_without_response_is_rejected() {
        let fixture: ChatFixture =
            serde_json::from_str(r#"{"model_id": "s", "rules": [{"match": {"exact": "x"}}]}"#).unwrap();
        assert!(ScriptedChat::from_fixture(fixture).is_err());
    }

    #[test]
    fn vision_fixture() {
        let fixture: VisionFixture = serde_json::from_str(
            r#"{"model_id": "v", "images": {"a.jpg": {"caption": "a dog",
                 "answers": {"What color is the dog?": "brown"}, "default_answer": "no"}}}"#,
        )
        .unwrap();
        let v = ScriptedVision::from_fixture(fixture);
        let req = |q: &str, img: &str| VqaRequest {
            image_ref: img.into(),
            question: q.into(),
            prompt: String::new(),
        };
        assert_eq!(v.answer(&req(" what color is the dog? ", "a.jpg")).unwrap(), "brown");
        assert_eq!(v.answer(&req("Is it raining?", "a.jpg")).unwrap(), "no");
        assert_eq!(v.caption("a.jpg", "").unwrap(), "a dog");
        assert_eq!(
            v.answer(&req("x", "b.jpg")),
            Err(BackendError::ImageNotFound("b.jpg".into()))
        );
    }
}
