//! Domain values shared by every stage of the pipeline.
//!
//! Answer indices are 0-based everywhere in this crate. Prompts render them
//! 1-based.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "vcr")]
    VcrQa,
    #[serde(rename = "snli_ve")]
    SnliVe,
}

impl TaskKind {
    /// Directory name used for prompt templates and record schemas.
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::VcrQa => "vcr",
            TaskKind::SnliVe => "snli_ve",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The fixed visual-entailment label order. Indices into
/// [`AnswerSpace::EntailmentLabels`] follow this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntailmentLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl EntailmentLabel {
    pub const ALL: [EntailmentLabel; 3] = [
        EntailmentLabel::Entailment,
        EntailmentLabel::Neutral,
        EntailmentLabel::Contradiction,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntailmentLabel::Entailment => "entailment",
            EntailmentLabel::Neutral => "neutral",
            EntailmentLabel::Contradiction => "contradiction",
        }
    }

    /// Accepts full names and the single-letter forms `E`, `N`, `C`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailment" | "e" => Some(EntailmentLabel::Entailment),
            "neutral" | "n" => Some(EntailmentLabel::Neutral),
            "contradiction" | "c" => Some(EntailmentLabel::Contradiction),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum AnswerSpace {
    MultipleChoice { choices: Vec<String> },
    EntailmentLabels,
}

impl AnswerSpace {
    pub fn multiple_choice<I, S>(choices: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AnswerSpace::MultipleChoice {
            choices: choices.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AnswerSpace::MultipleChoice { choices } => choices.len(),
            AnswerSpace::EntailmentLabels => EntailmentLabel::ALL.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_index(&self, index: usize) -> bool {
        index < self.len()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        match self {
            AnswerSpace::MultipleChoice { choices } => choices.get(index).map(String::as_str),
            AnswerSpace::EntailmentLabels => EntailmentLabel::from_index(index).map(|l| l.as_str()),
        }
    }

    pub fn labels(&self) -> Vec<&str> {
        (0..self.len()).filter_map(|i| self.label(i)).collect()
    }
}

/// A VCR person tag with its bounding box, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonRegion {
    pub tag_id: u32,
    /// `[x_min, y_min, x_max, y_max]`
    pub bbox: [f64; 4],
    pub image_width: f64,
}

impl PersonRegion {
    pub fn new(tag_id: u32, bbox: [f64; 4], image_width: f64) -> Self {
        PersonRegion {
            tag_id,
            bbox,
            image_width,
        }
    }

    pub fn is_valid(&self) -> bool {
        let [x_min, _, x_max, _] = self.bbox;
        self.tag_id >= 1
            && x_min.is_finite()
            && x_max.is_finite()
            && self.image_width.is_finite()
            && 0.0 <= x_min
            && x_min < x_max
            && x_max <= self.image_width
    }

    pub fn center_x(&self) -> f64 {
        (self.bbox[0] + self.bbox[2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    /// File path or URL; `world://` locators address simulated scenes.
    pub image_ref: String,
    pub task_kind: TaskKind,
    /// The question for VCR, the hypothesis for SNLI-VE.
    pub main_text: String,
    pub answer_space: AnswerSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub region_tags: Vec<PersonRegion>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("task id is empty")]
    EmptyId,
    #[error("task {0}: main text is empty")]
    EmptyText(String),
    #[error("task {0}: VCR tasks need exactly 4 choices, got {1}")]
    ChoiceCount(String, usize),
    #[error("task {0}: SNLI-VE tasks must use the entailment label space")]
    WrongSpace(String),
    #[error("task {0}: gold index {1} outside answer space of size {2}")]
    GoldOutOfRange(String, usize, usize),
    #[error("task {0}: invalid person region for tag {1}")]
    InvalidRegion(String, u32),
}

impl TaskInstance {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.id.is_empty() {
            return Err(TaskError::EmptyId);
        }
        if self.main_text.trim().is_empty() {
            return Err(TaskError::EmptyText(self.id.clone()));
        }
        match (self.task_kind, &self.answer_space) {
            (TaskKind::VcrQa, AnswerSpace::MultipleChoice { choices }) => {
                if choices.len() != 4 {
                    return Err(TaskError::ChoiceCount(self.id.clone(), choices.len()));
                }
            }
            (TaskKind::VcrQa, AnswerSpace::EntailmentLabels) => {
                return Err(TaskError::ChoiceCount(self.id.clone(), 0));
            }
            (TaskKind::SnliVe, AnswerSpace::EntailmentLabels) => {}
            (TaskKind::SnliVe, _) => return Err(TaskError::WrongSpace(self.id.clone())),
        }
        if let Some(g) = self.gold {
            if !self.answer_space.contains_index(g) {
                return Err(TaskError::GoldOutOfRange(
                    self.id.clone(),
                    g,
                    self.answer_space.len(),
                ));
            }
        }
        if let Some(r) = self.region_tags.iter().find(|r| !r.is_valid()) {
            return Err(TaskError::InvalidRegion(self.id.clone(), r.tag_id));
        }
        Ok(())
    }
}

/// The roles a backend can play. `Finalizer` is the reasoner asked to
/// commit to a best guess at the iteration bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Questioner,
    Reasoner,
    Finalizer,
    Answerer,
    Captioner,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Questioner,
        Role::Reasoner,
        Role::Finalizer,
        Role::Answerer,
        Role::Captioner,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Questioner => "questioner",
            Role::Reasoner => "reasoner",
            Role::Finalizer => "finalizer",
            Role::Answerer => "answerer",
            Role::Captioner => "captioner",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub sub_question: String,
    pub sub_answer: String,
    pub iteration: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictKind {
    Confident { answer: usize },
    Unsure,
    Forced { answer: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub kind: VerdictKind,
    pub raw_text: String,
}

impl Verdict {
    pub fn confident(answer: usize, raw_text: impl Into<String>) -> Self {
        Verdict {
            kind: VerdictKind::Confident { answer },
            raw_text: raw_text.into(),
        }
    }

    pub fn unsure(raw_text: impl Into<String>) -> Self {
        Verdict {
            kind: VerdictKind::Unsure,
            raw_text: raw_text.into(),
        }
    }

    pub fn forced(answer: usize, raw_text: impl Into<String>) -> Self {
        Verdict {
            kind: VerdictKind::Forced { answer },
            raw_text: raw_text.into(),
        }
    }

    /// The predicted index for confident and forced verdicts.
    pub fn answer(&self) -> Option<usize> {
        match self.kind {
            VerdictKind::Confident { answer } | VerdictKind::Forced { answer } => Some(answer),
            VerdictKind::Unsure => None,
        }
    }

    pub fn is_unsure(&self) -> bool {
        matches!(self.kind, VerdictKind::Unsure)
    }

    pub fn is_forced(&self) -> bool {
        matches!(self.kind, VerdictKind::Forced { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    pub sub_qas: Vec<QaPair>,
    pub reasoner_analysis: String,
    pub verdict: Verdict,
}

/// One backend call made while running a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: Role,
    /// 0 for the caption call, otherwise the iteration the call belongs to.
    pub iteration: u32,
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub task_id: String,
    pub caption: String,
    pub max_iterations: u32,
    pub iterations: Vec<IterationRecord>,
    #[serde(rename = "final")]
    pub final_verdict: Option<Verdict>,
    pub backend_fingerprint: String,
    #[serde(default)]
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("iteration index {got} does not follow {expected}")]
    NonContiguousIteration { expected: u32, got: u32 },
    #[error("cannot append iteration after a final verdict")]
    AppendAfterConfident,
    #[error("iteration {0} has no sub-question/answer pairs")]
    EmptyIteration(u32),
    #[error("iteration {index} holds a pair tagged with iteration {pair}")]
    PairIterationMismatch { index: u32, pair: u32 },
    #[error("iteration {index} exceeds the bound of {max}")]
    ExceedsBound { index: u32, max: u32 },
    #[error("forced verdict at iteration {index} before the bound of {max}")]
    ForcedBeforeBound { index: u32, max: u32 },
    #[error("final verdict does not match the last iteration")]
    FinalMismatch,
    #[error("transcript has no iterations")]
    Empty,
    #[error("transcript ends on an unsure verdict without an abort reason")]
    Unfinished,
    #[error("transcript serialization failed: {0}")]
    Serialization(String),
}

impl Transcript {
    pub fn new(
        task_id: impl Into<String>,
        caption: impl Into<String>,
        max_iterations: u32,
        backend_fingerprint: impl Into<String>,
    ) -> Self {
        Transcript {
            task_id: task_id.into(),
            caption: caption.into(),
            max_iterations,
            iterations: Vec::new(),
            final_verdict: None,
            backend_fingerprint: backend_fingerprint.into(),
            calls: Vec::new(),
            aborted: None,
        }
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted.is_some()
    }

    pub fn iteration_count(&self) -> usize {
        self.iterations.len()
    }

    /// Appends the next round. The final verdict always mirrors the last
    /// appended round.
    pub fn append_iteration(&mut self, rec: IterationRecord) -> Result<(), TranscriptError> {
        let expected = self.iterations.len() as u32 + 1;
        if let Some(last) = self.iterations.last() {
            if !last.verdict.is_unsure() {
                return Err(TranscriptError::AppendAfterConfident);
            }
        }
        if rec.index != expected {
            return Err(TranscriptError::NonContiguousIteration {
                expected,
                got: rec.index,
            });
        }
        check_record(&rec, self.max_iterations)?;
        self.final_verdict = Some(rec.verdict.clone());
        self.iterations.push(rec);
        Ok(())
    }

    /// Checks every structural invariant. Aborted transcripts may be empty and
    /// may end on an unsure verdict.
    pub fn validate(&self) -> Result<(), TranscriptError> {
        if self.iterations.is_empty() {
            if self.is_aborted() && self.final_verdict.is_none() {
                return Ok(());
            }
            return Err(TranscriptError::Empty);
        }
        let last = self.iterations.len() - 1;
        for (i, rec) in self.iterations.iter().enumerate() {
            let expected = i as u32 + 1;
            if rec.index != expected {
                return Err(TranscriptError::NonContiguousIteration {
                    expected,
                    got: rec.index,
                });
            }
            if i < last && !rec.verdict.is_unsure() {
                return Err(TranscriptError::AppendAfterConfident);
            }
            check_record(rec, self.max_iterations)?;
        }
        if self.final_verdict.as_ref() != Some(&self.iterations[last].verdict) {
            return Err(TranscriptError::FinalMismatch);
        }
        if !self.is_aborted() && self.iterations[last].verdict.is_unsure() {
            return Err(TranscriptError::Unfinished);
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> Result<String, TranscriptError> {
        serde_json::to_string(self).map_err(|e| TranscriptError::Serialization(e.to_string()))
    }

    pub fn from_json_line(line: &str) -> Result<Self, TranscriptError> {
        serde_json::from_str(line).map_err(|e| TranscriptError::Serialization(e.to_string()))
    }

    /// Like [`Transcript::from_json_line`] but rejects non-UTF-8 input.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, TranscriptError> {
        let text =
            std::str::from_utf8(bytes).map_err(|e| TranscriptError::Serialization(e.to_string()))?;
        Self::from_json_line(text)
    }
}

fn check_record(rec: &IterationRecord, max: u32) -> Result<(), TranscriptError> {
    if rec.index > max {
        return Err(TranscriptError::ExceedsBound {
            index: rec.index,
            max,
        });
    }
    if rec.sub_qas.is_empty() {
        return Err(TranscriptError::EmptyIteration(rec.index));
    }
    if let Some(qa) = rec.sub_qas.iter().find(|qa| qa.iteration != rec.index) {
        return Err(TranscriptError::PairIterationMismatch {
            index: rec.index,
            pair: qa.iteration,
        });
    }
    if rec.verdict.is_forced() && rec.index != max {
        return Err(TranscriptError::ForcedBeforeBound {
            index: rec.index,
            max,
        });
    }
    Ok(())
}
