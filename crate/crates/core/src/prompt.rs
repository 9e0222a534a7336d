//! Role prompts built by placeholder substitution.
//!
//! Templates are plain text with square-bracket placeholders such as
//! `[question]`. A literal bracket is written doubled (`[[`, `]]`). Any
//! other bracketed text that is not a lowercase identifier is kept verbatim.
//! Each role accepts a fixed set of placeholders; a template using any other
//! name is rejected when it is loaded.
//!
//! Templates live in `prompts/<task_kind>/<role>.txt`. The defaults are
//! compiled in and can be overridden file by file with [`PromptSet::load_dir`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::types::{QaPair, TaskInstance, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptRole {
    Captioner,
    QuestionerFirst,
    QuestionerFollowup,
    Answerer,
    Reasoner,
    /// Reasoner variant that must pick an answer at the iteration bound.
    Finalizer,
}

impl PromptRole {
    pub const ALL: [PromptRole; 6] = [
        PromptRole::Captioner,
        PromptRole::QuestionerFirst,
        PromptRole::QuestionerFollowup,
        PromptRole::Answerer,
        PromptRole::Reasoner,
        PromptRole::Finalizer,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            PromptRole::Captioner => "captioner",
            PromptRole::QuestionerFirst => "questioner_first",
            PromptRole::QuestionerFollowup => "questioner_followup",
            PromptRole::Answerer => "answerer",
            PromptRole::Reasoner => "reasoner",
            PromptRole::Finalizer => "finalizer",
        }
    }

    /// Placeholder registry for the role.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            PromptRole::Captioner => &[],
            PromptRole::QuestionerFirst => {
                &["question", "hypothesis", "caption", "choices", "max_questions"]
            }
            PromptRole::QuestionerFollowup => &[
                "question",
                "hypothesis",
                "caption",
                "choices",
                "max_questions",
                "history",
                "analysis",
            ],
            PromptRole::Answerer => &["sub_question"],
            PromptRole::Reasoner => &["question", "hypothesis", "caption", "choices", "history"],
            PromptRole::Finalizer => &[
                "question",
                "hypothesis",
                "caption",
                "choices",
                "history",
                "analysis",
            ],
        }
    }
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no value supplied for placeholder [{0}]")]
    MissingPlaceholder(String),
    #[error("placeholder [{name}] is not allowed in {role} templates")]
    UnknownPlaceholder { name: String, role: PromptRole },
    #[error("empty value supplied for placeholder [{0}]")]
    EmptyValue(String),
    #[error("expected a {expected} template for {expected_kind}, got {got} for {got_kind}")]
    TemplateRoleMismatch {
        expected: PromptRole,
        expected_kind: TaskKind,
        got: PromptRole,
        got_kind: TaskKind,
    },
    #[error("sub-question/answer history is empty")]
    EmptyHistory,
    #[error("analysis text is empty")]
    EmptyAnalysis,
    #[error("sub-question is empty")]
    EmptyQuestion,
    #[error("reading template {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    role: PromptRole,
    task_kind: TaskKind,
    body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(
        role: PromptRole,
        task_kind: TaskKind,
        body: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let body = body.into();
        let segments = tokenize(&body);
        for seg in &segments {
            if let Segment::Placeholder(name) = seg {
                if !role.placeholders().contains(&name.as_str()) {
                    return Err(PromptError::UnknownPlaceholder {
                        name: name.clone(),
                        role,
                    });
                }
            }
        }
        Ok(PromptTemplate {
            role,
            task_kind,
            body,
            segments,
        })
    }

    pub fn role(&self) -> PromptRole {
        self.role
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Distinct placeholder names in order of first use.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for seg in &self.segments {
            if let Segment::Placeholder(name) = seg {
                if !out.contains(&name.as_str()) {
                    out.push(name);
                }
            }
        }
        out
    }

    fn expect(&self, role: PromptRole, kind: TaskKind) -> Result<(), PromptError> {
        if self.role != role || self.task_kind != kind {
            return Err(PromptError::TemplateRoleMismatch {
                expected: role,
                expected_kind: kind,
                got: self.role,
                got_kind: self.task_kind,
            });
        }
        Ok(())
    }
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

fn tokenize(body: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = body;
    while let Some(c) = rest.chars().next() {
        if let Some(tail) = rest.strip_prefix("[[") {
            literal.push('[');
            rest = tail;
        } else if let Some(tail) = rest.strip_prefix("]]") {
            literal.push(']');
            rest = tail;
        } else if c == '[' {
            let inner = &rest[1..];
            match inner.find(']') {
                Some(end) if is_placeholder_name(&inner[..end]) => {
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Placeholder(inner[..end].to_string()));
                    rest = &inner[end + 1..];
                }
                _ => {
                    literal.push('[');
                    rest = inner;
                }
            }
        } else {
            literal.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    segments
}

/// Placeholder name to value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubstitutionMap(BTreeMap<String, String>);

impl SubstitutionMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.insert(name.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

/// Substitutes every placeholder. Values are inserted verbatim and are not
/// scanned for further placeholders.
pub fn render(template: &PromptTemplate, subs: &SubstitutionMap) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.body.len());
    for seg in &template.segments {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Placeholder(name) => {
                let value = subs
                    .get(name)
                    .ok_or_else(|| PromptError::MissingPlaceholder(name.clone()))?;
                if value.trim().is_empty() {
                    return Err(PromptError::EmptyValue(name.clone()));
                }
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// One choice per line, numbered from 1.
pub fn render_choices(task: &TaskInstance) -> String {
    task.answer_space
        .labels()
        .iter()
        .enumerate()
        .map(|(i, label)| format!("{}. {}", i + 1, label))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Numbered `Sub-question i:` / `Sub-answer i:` lines, ordered by iteration
/// and then by position within the iteration.
pub fn render_history(history: &[QaPair]) -> String {
    let mut ordered: Vec<&QaPair> = history.iter().collect();
    // stable: keeps parse order inside an iteration
    ordered.sort_by_key(|qa| qa.iteration);
    let mut out = String::new();
    for (i, qa) in ordered.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "Sub-question {n}: {}\nSub-answer {n}: {}",
            one_line(&qa.sub_question),
            one_line(&qa.sub_answer),
            n = i + 1
        ));
    }
    out
}

// Keeps the history block line-oriented so it can be read back.
fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn task_subs(task: &TaskInstance, caption: &str) -> SubstitutionMap {
    SubstitutionMap::new()
        .with("question", task.main_text.clone())
        .with("hypothesis", task.main_text.clone())
        .with("caption", caption)
        .with("choices", render_choices(task))
}

pub fn build_questioner_first(
    task: &TaskInstance,
    caption: &str,
    max_questions: usize,
    tpl: &PromptTemplate,
) -> Result<String, PromptError> {
    tpl.expect(PromptRole::QuestionerFirst, task.task_kind)?;
    let subs = task_subs(task, caption).with("max_questions", max_questions.to_string());
    render(tpl, &subs)
}

pub fn build_questioner_followup(
    task: &TaskInstance,
    caption: &str,
    history: &[QaPair],
    analysis: &str,
    max_questions: usize,
    tpl: &PromptTemplate,
) -> Result<String, PromptError> {
    tpl.expect(PromptRole::QuestionerFollowup, task.task_kind)?;
    if history.is_empty() {
        return Err(PromptError::EmptyHistory);
    }
    if analysis.trim().is_empty() {
        return Err(PromptError::EmptyAnalysis);
    }
    let subs = task_subs(task, caption)
        .with("max_questions", max_questions.to_string())
        .with("history", render_history(history))
        .with("analysis", analysis.trim());
    render(tpl, &subs)
}

pub fn build_reasoner(
    task: &TaskInstance,
    caption: &str,
    history: &[QaPair],
    tpl: &PromptTemplate,
) -> Result<String, PromptError> {
    tpl.expect(PromptRole::Reasoner, task.task_kind)?;
    if history.is_empty() {
        return Err(PromptError::EmptyHistory);
    }
    let subs = task_subs(task, caption).with("history", render_history(history));
    render(tpl, &subs)
}

pub fn build_finalizer(
    task: &TaskInstance,
    caption: &str,
    history: &[QaPair],
    analysis: &str,
    tpl: &PromptTemplate,
) -> Result<String, PromptError> {
    tpl.expect(PromptRole::Finalizer, task.task_kind)?;
    if history.is_empty() {
        return Err(PromptError::EmptyHistory);
    }
    let analysis = if analysis.trim().is_empty() {
        "(none)"
    } else {
        analysis.trim()
    };
    let subs = task_subs(task, caption)
        .with("history", render_history(history))
        .with("analysis", analysis);
    render(tpl, &subs)
}

pub fn build_answerer(sub_question: &str, tpl: &PromptTemplate) -> Result<String, PromptError> {
    if tpl.role != PromptRole::Answerer {
        return Err(PromptError::TemplateRoleMismatch {
            expected: PromptRole::Answerer,
            expected_kind: tpl.task_kind,
            got: tpl.role,
            got_kind: tpl.task_kind,
        });
    }
    if sub_question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    render(
        tpl,
        &SubstitutionMap::new().with("sub_question", sub_question.trim()),
    )
}

pub fn build_captioner(tpl: &PromptTemplate) -> Result<String, PromptError> {
    render(tpl, &SubstitutionMap::new())
}

/// Templates for every (task kind, role) pair.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<(TaskKind, PromptRole), PromptTemplate>,
}

macro_rules! builtin {
    ($kind:literal, $role:literal) => {
        include_str!(concat!("../prompts/", $kind, "/", $role, ".txt"))
    };
}

fn builtin_body(kind: TaskKind, role: PromptRole) -> &'static str {
    match (kind, role) {
        (TaskKind::VcrQa, PromptRole::Captioner) => builtin!("vcr", "captioner"),
        (TaskKind::VcrQa, PromptRole::QuestionerFirst) => builtin!("vcr", "questioner_first"),
        (TaskKind::VcrQa, PromptRole::QuestionerFollowup) => builtin!("vcr", "questioner_followup"),
        (TaskKind::VcrQa, PromptRole::Answerer) => builtin!("vcr", "answerer"),
        (TaskKind::VcrQa, PromptRole::Reasoner) => builtin!("vcr", "reasoner"),
        (TaskKind::VcrQa, PromptRole::Finalizer) => builtin!("vcr", "finalizer"),
        (TaskKind::SnliVe, PromptRole::Captioner) => builtin!("snli_ve", "captioner"),
        (TaskKind::SnliVe, PromptRole::QuestionerFirst) => builtin!("snli_ve", "questioner_first"),
        (TaskKind::SnliVe, PromptRole::QuestionerFollowup) => {
            builtin!("snli_ve", "questioner_followup")
        }
        (TaskKind::SnliVe, PromptRole::Answerer) => builtin!("snli_ve", "answerer"),
        (TaskKind::SnliVe, PromptRole::Reasoner) => builtin!("snli_ve", "reasoner"),
        (TaskKind::SnliVe, PromptRole::Finalizer) => builtin!("snli_ve", "finalizer"),
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for kind in [TaskKind::VcrQa, TaskKind::SnliVe] {
            for role in PromptRole::ALL {
                let tpl = PromptTemplate::parse(role, kind, builtin_body(kind, role).trim_end())
                    .expect("builtin templates are valid");
                templates.insert((kind, role), tpl);
            }
        }
        PromptSet { templates }
    }

    /// Builtin templates overridden by any `<kind>/<role>.txt` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for kind in [TaskKind::VcrQa, TaskKind::SnliVe] {
            for role in PromptRole::ALL {
                let path = dir
                    .join(kind.as_str())
                    .join(format!("{}.txt", role.file_stem()));
                if !path.exists() {
                    continue;
                }
                let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                let tpl = PromptTemplate::parse(role, kind, body.trim_end())?;
                set.templates.insert((kind, role), tpl);
            }
        }
        Ok(set)
    }

    pub fn get(&self, kind: TaskKind, role: PromptRole) -> &PromptTemplate {
        &self.templates[&(kind, role)]
    }

    pub fn set(&mut self, tpl: PromptTemplate) {
        self.templates
            .insert((tpl.task_kind, tpl.role), tpl);
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}
