//! Structured readings of raw model output: sub-question lists from the
//! questioner and verdicts from the reasoner.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::types::{AnswerSpace, Verdict};

pub const DEFAULT_MAX_SUBQUESTIONS: usize = 5;
pub const DEFAULT_UNSURE_PHRASE: &str = "not sure";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no sub-questions found in questioner output")]
    NoQuestionsFound,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedQuestions {
    pub questions: Vec<String>,
    /// Non-question residue such as preambles.
    pub dropped_lines: Vec<String>,
    /// Case-insensitive repeats of an earlier question.
    pub duplicates: Vec<String>,
}

static LIST_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)^(?:
            (?:sub[-\s]?questions?|questions?|q)\s*\d{0,3}\s*[:.)\-]\s*
          | \(?\d{1,3}\s*[.):]\s*
          | \(\d{1,3}\)\s*
          | [-*\u{2022}+]\s+
        )",
    )
    .unwrap()
});

const INTERROGATIVES: &[&str] = &[
    "what", "who", "whom", "whose", "where", "when", "why", "how", "which", "is", "are", "was",
    "were", "do", "does", "did", "can", "could", "will", "would", "should", "has", "have", "had",
];

fn normalize_question(body: &str) -> String {
    let mut s = body.split_whitespace().collect::<Vec<_>>().join(" ");
    // markdown emphasis and wrapping quotes
    for wrap in ["**", "__", "\"", "'", "`"] {
        if s.len() >= 2 * wrap.len() && s.starts_with(wrap) && s.ends_with(wrap) {
            s = s[wrap.len()..s.len() - wrap.len()].trim().to_string();
        }
    }
    s
}

fn starts_interrogative(s: &str) -> bool {
    let first = s
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("")
        .to_ascii_lowercase();
    INTERROGATIVES.contains(&first.as_str())
}

/// Extracts the questioner's sub-questions in order.
///
/// Numbered or bulleted lines are preferred; bare lines ending in `?` are
/// only used when no list items are present. Repeats are removed by
/// case-insensitive comparison and the result is cut to `max_count`.
pub fn parse_subquestions(text: &str, max_count: usize) -> Result<ParsedQuestions, ParseError> {
    let mut marked: Vec<String> = Vec::new();
    let mut bare: Vec<String> = Vec::new();
    let mut dropped: Vec<String> = Vec::new();

    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (has_marker, body) = match LIST_MARKER.find(line) {
            Some(m) => (true, &line[m.end()..]),
            None => (false, line),
        };
        let mut q = normalize_question(body);
        let is_question = if q.ends_with('?') {
            q.len() > 1
        } else if has_marker && starts_interrogative(&q) {
            q.push('?');
            true
        } else {
            false
        };
        match (is_question, has_marker) {
            (true, true) => marked.push(q),
            (true, false) => bare.push(q),
            _ => dropped.push(line.to_string()),
        }
    }

    let candidates = if marked.is_empty() {
        bare
    } else {
        dropped.extend(bare);
        marked
    };

    let mut out = ParsedQuestions {
        dropped_lines: dropped,
        ..Default::default()
    };
    let mut seen: Vec<String> = Vec::new();
    for q in candidates {
        let key = q.to_lowercase();
        if seen.contains(&key) {
            out.duplicates.push(q);
        } else {
            seen.push(key);
            out.questions.push(q);
        }
    }
    out.questions.truncate(max_count);
    if out.questions.is_empty() {
        return Err(ParseError::NoQuestionsFound);
    }
    Ok(out)
}

/// Case-insensitive phrase detector for the reasoner's "unsure" signal.
///
/// Text inside double quotes and lines that restate a sub-answer are ignored,
/// so a quoted "I'm not sure" from the answerer does not count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnsureDetector {
    phrases: Vec<String>,
}

impl Default for UnsureDetector {
    fn default() -> Self {
        UnsureDetector {
            phrases: vec![DEFAULT_UNSURE_PHRASE.to_string()],
        }
    }
}

static QUOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new("\"[^\"\\n]*\"|\u{201c}[^\u{201d}\\n]*\u{201d}").unwrap());
static SUB_ANSWER_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*sub[-\s]?answers?\b").unwrap());

impl UnsureDetector {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let phrases: Vec<String> = phrases
            .into_iter()
            .map(|p| p.as_ref().trim().to_lowercase())
            .filter(|p| !p.is_empty())
            .collect();
        if phrases.is_empty() {
            return Self::default();
        }
        UnsureDetector { phrases }
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn detect(&self, text: &str) -> bool {
        let unquoted = QUOTED.replace_all(text, " ");
        unquoted
            .lines()
            .filter(|l| !SUB_ANSWER_LINE.is_match(l))
            .map(str::to_lowercase)
            .any(|l| self.phrases.iter().any(|p| l.contains(p.as_str())))
    }
}

/// [`UnsureDetector::detect`] with the default phrase list.
pub fn detect_unsure(text: &str) -> bool {
    UnsureDetector::default().detect(text)
}

// Explicit answer statements: "answer is 2", "Answer: (b)", "final answer: option 3".
static ANSWER_STATEMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)(?: ^ | [^\w-] ) answer \b \s*
          (?: is | would\s+be | should\s+be | must\s+be | [:=\-] )? \s*
          (?: choice | option | candidate | number | no\. )? \s*
          (?: \#? [\(\[]? \s* ([1-9]) \b
            | [\(\[] \s* ([a-d]) \s* [\)\]]
            | ([a-d]) (?: [).,;:] | \s*$ ) )",
    )
    .unwrap()
});

// Weaker references: "(2)", "choice 3", "option (c)".
static CHOICE_REFERENCE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)
            \b (?: choice | option | candidate ) \s* (?: number \s* )? \#? [\(\[]? \s* ([1-9]) \b
          | \b (?: choice | option | candidate ) \s* [\(\[] \s* ([a-d]) \s* [\)\]]
          | \( \s* ([1-9]) \s* \)
          | \( \s* ([a-d]) \s* \)",
    )
    .unwrap()
});

static ENTAIL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bentail").unwrap());
static NEUTRAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bneutral").unwrap());
static CONTRADICT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bcontradict").unwrap());

#[derive(Debug, Clone, Copy)]
struct ChoiceMatch {
    index: usize,
    start: usize,
}

enum Tier {
    Found(ChoiceMatch),
    Ambiguous,
    Absent,
}

fn capture_index(caps: &regex::Captures<'_>) -> Option<usize> {
    caps.iter().skip(1).flatten().next().and_then(|m| {
        let c = m.as_str().chars().next()?.to_ascii_lowercase();
        match c {
            '1'..='9' => Some(c as usize - '1' as usize),
            'a'..='d' => Some(c as usize - 'a' as usize),
            _ => None,
        }
    })
}

fn pattern_tier(re: &Regex, text: &str, space: &AnswerSpace) -> Tier {
    let mut found: Option<ChoiceMatch> = None;
    for caps in re.captures_iter(text) {
        let Some(index) = capture_index(&caps) else { continue };
        if !space.contains_index(index) {
            continue;
        }
        let start = caps.get(0).map(|m| m.start()).unwrap_or(0);
        match found {
            Some(prev) if prev.index != index => return Tier::Ambiguous,
            _ => found = Some(ChoiceMatch { index, start }),
        }
    }
    found.map_or(Tier::Absent, Tier::Found)
}

fn containment_tier(text: &str, space: &AnswerSpace) -> Tier {
    let AnswerSpace::MultipleChoice { choices } = space else {
        return Tier::Absent;
    };
    let lower = text.to_lowercase();
    let mut found: Option<ChoiceMatch> = None;
    for (index, choice) in choices.iter().enumerate() {
        let needle = choice.trim().trim_end_matches('.').trim().to_lowercase();
        if needle.is_empty() {
            continue;
        }
        if let Some(start) = lower.rfind(&needle) {
            if found.is_some() {
                return Tier::Ambiguous;
            }
            // lowercasing can shift byte offsets for some scripts
            let start = if text.is_char_boundary(start) { start } else { 0 };
            found = Some(ChoiceMatch { index, start });
        }
    }
    found.map_or(Tier::Absent, Tier::Found)
}

fn keyword_tier(text: &str, space: &AnswerSpace) -> Tier {
    if !matches!(space, AnswerSpace::EntailmentLabels) {
        return Tier::Absent;
    }
    let hits: Vec<(usize, usize)> = [&*ENTAIL, &*NEUTRAL, &*CONTRADICT]
        .iter()
        .enumerate()
        .filter_map(|(i, re)| re.find_iter(text).last().map(|m| (i, m.start())))
        .collect();
    match hits.as_slice() {
        [] => Tier::Absent,
        [(index, start)] => Tier::Found(ChoiceMatch {
            index: *index,
            start: *start,
        }),
        _ => Tier::Ambiguous,
    }
}

fn locate_choice(text: &str, space: &AnswerSpace) -> Option<ChoiceMatch> {
    let tiers: [&dyn Fn() -> Tier; 4] = [
        &|| pattern_tier(&ANSWER_STATEMENT, text, space),
        &|| pattern_tier(&CHOICE_REFERENCE, text, space),
        &|| containment_tier(text, space),
        &|| keyword_tier(text, space),
    ];
    for tier in tiers {
        match tier() {
            Tier::Found(m) => return Some(m),
            Tier::Ambiguous => return None,
            Tier::Absent => {}
        }
    }
    None
}

/// Maps the reasoner's free text to a 0-based answer index.
///
/// Resolution order: explicit answer statements, then numbered or lettered
/// choice references, then verbatim containment of exactly one choice, then
/// entailment keywords. The first tier with any match decides; a tier that
/// points at more than one index makes the result `None`.
pub fn extract_choice(text: &str, answer_space: &AnswerSpace) -> Option<usize> {
    locate_choice(text, answer_space).map(|m| m.index)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedVerdict {
    pub analysis: String,
    pub verdict: Verdict,
}

fn sentence_start(text: &str, pos: usize) -> usize {
    // the match may begin on the separator's trailing space
    let end = text[pos..].chars().next().map_or(pos, |c| pos + c.len_utf8());
    let head = &text[..end];
    let mut best = 0;
    for sep in ["\n", ". ", "! ", "? ", ".\t"] {
        if let Some(i) = head.rfind(sep) {
            best = best.max(i + sep.len());
        }
    }
    best
}

/// Splits reasoner output into analysis and verdict.
///
/// The unsure phrase wins over any answer found in the same text. Output
/// with no recognisable choice is also read as unsure so the loop gathers
/// more evidence instead of guessing.
pub fn parse_reasoner(
    text: &str,
    answer_space: &AnswerSpace,
    detector: &UnsureDetector,
) -> ParsedVerdict {
    let trimmed = text.trim();
    if detector.detect(text) {
        return ParsedVerdict {
            analysis: trimmed.to_string(),
            verdict: Verdict::unsure(text),
        };
    }
    match locate_choice(text, answer_space) {
        Some(m) => {
            let head = text[..sentence_start(text, m.start)].trim();
            let analysis = if head.is_empty() { trimmed } else { head };
            ParsedVerdict {
                analysis: analysis.to_string(),
                verdict: Verdict::confident(m.index, text),
            }
        }
        None => ParsedVerdict {
            analysis: trimmed.to_string(),
            verdict: Verdict::unsure(text),
        },
    }
}
