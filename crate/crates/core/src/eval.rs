//! Accuracy over transcripts and ablation comparison tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{EntailmentLabel, TaskInstance, TaskKind, Transcript};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("transcript for task {0} has no matching task")]
    JoinMismatch(String),
    #[error("an ablation needs at least two reports, got {0}")]
    TooFewReports(usize),
    #[error("baseline {0} is not among the reports")]
    UnknownBaseline(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_kind: Option<TaskKind>,
    pub n_total: usize,
    /// Non-aborted transcripts whose task has a gold label.
    pub n_scored: usize,
    pub correct: usize,
    /// Absent when nothing could be scored.
    pub accuracy: Option<f64>,
    /// Keyed by gold label, for entailment tasks.
    pub per_class: BTreeMap<String, ClassStat>,
    pub mean_iterations: Option<f64>,
    pub aborted: usize,
    /// Scored predictions that came from a forced verdict.
    pub forced: usize,
    pub forced_fraction: Option<f64>,
}

/// Scores final verdicts against gold labels. Confident and forced verdicts
/// both count as predictions; aborted transcripts are counted but not scored.
pub fn score(transcripts: &[Transcript], tasks: &[TaskInstance]) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<&str, &TaskInstance> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut kinds = tasks.iter().map(|t| t.task_kind);
    let first = kinds.next();
    let task_kind = if kinds.all(|k| Some(k) == first) { first } else { None };

    let mut n_scored = 0;
    let mut correct = 0;
    let mut aborted = 0;
    let mut forced = 0;
    let mut iterations = Vec::new();
    let mut classes: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for tr in transcripts {
        let task = by_id
            .get(tr.task_id.as_str())
            .ok_or_else(|| EvalError::JoinMismatch(tr.task_id.clone()))?;
        if tr.is_aborted() {
            aborted += 1;
            continue;
        }
        iterations.push(tr.iteration_count());
        let Some(gold) = task.gold else { continue };
        let verdict = tr.final_verdict.as_ref();
        let hit = verdict.and_then(|v| v.answer()) == Some(gold);
        n_scored += 1;
        correct += hit as usize;
        forced += verdict.is_some_and(|v| v.is_forced()) as usize;
        if task.task_kind == TaskKind::SnliVe {
            let label = EntailmentLabel::from_index(gold).map_or("unknown", EntailmentLabel::as_str);
            let e = classes.entry(label.to_string()).or_default();
            e.0 += 1;
            e.1 += hit as usize;
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(EvalReport {
        task_kind,
        n_total: transcripts.len(),
        n_scored,
        correct,
        accuracy: ratio(correct, n_scored),
        per_class: classes
            .into_iter()
            .map(|(k, (count, c))| {
                (
                    k,
                    ClassStat {
                        count,
                        correct: c,
                        accuracy: c as f64 / count as f64,
                    },
                )
            })
            .collect(),
        mean_iterations: ratio(iterations.iter().sum(), iterations.len()),
        aborted,
        forced,
        forced_fraction: ratio(forced, n_scored),
    })
}

fn pct(x: Option<f64>) -> String {
    x.map_or("-".to_string(), |v| format!("{:.1}", v * 100.0))
}

impl EvalReport {
    /// Percentage points, or `None` if nothing was scored.
    pub fn accuracy_points(&self) -> Option<f64> {
        self.accuracy.map(|a| a * 100.0)
    }

    /// Plain-text table; entailment runs get C/N/E columns.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let class = |name: &str| pct(self.per_class.get(name).map(|c| c.accuracy));
        if !self.per_class.is_empty() {
            let _ = writeln!(out, "{:>6} {:>6} {:>6} {:>6}", "C", "N", "E", "All");
            let _ = writeln!(
                out,
                "{:>6} {:>6} {:>6} {:>6}",
                class("contradiction"),
                class("neutral"),
                class("entailment"),
                pct(self.accuracy)
            );
        } else {
            let _ = writeln!(out, "accuracy        {}", pct(self.accuracy));
        }
        let _ = writeln!(out, "scored          {} of {}", self.n_scored, self.n_total);
        let _ = writeln!(out, "correct         {}", self.correct);
        let _ = writeln!(out, "aborted         {}", self.aborted);
        let _ = writeln!(
            out,
            "forced          {} ({}%)",
            self.forced,
            pct(self.forced_fraction)
        );
        let _ = writeln!(
            out,
            "mean iterations {}",
            self.mean_iterations.map_or("-".to_string(), |m| format!("{m:.2}"))
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub accuracy: Option<f64>,
    pub mean_iterations: Option<f64>,
    /// Accuracy difference to the baseline in percentage points.
    pub delta_points: Option<f64>,
    pub n_scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub baseline: String,
    pub rows: Vec<AblationRow>,
}

/// Aligns reports in the given order with deltas against `baseline`.
pub fn compare_ablation(reports: &[(String, EvalReport)], baseline: &str) -> Result<AblationTable, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports(reports.len()));
    }
    let base = reports
        .iter()
        .find(|(l, _)| l == baseline)
        .ok_or_else(|| EvalError::UnknownBaseline(baseline.to_string()))?;
    let base_acc = base.1.accuracy;
    let rows = reports
        .iter()
        .map(|(label, r)| AblationRow {
            label: label.clone(),
            accuracy: r.accuracy,
            mean_iterations: r.mean_iterations,
            delta_points: match (r.accuracy, base_acc) {
                (Some(a), Some(b)) => Some((a - b) * 100.0),
                _ => None,
            },
            n_scored: r.n_scored,
        })
        .collect();
    Ok(AblationTable {
        baseline: baseline.to_string(),
        rows,
    })
}

impl AblationTable {
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(6).max(6);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>9}  {:>7}  {:>6}\n",
            "config", "accuracy", "mean iter", "delta", "scored"
        );
        for r in &self.rows {
            let delta = if r.label == self.baseline {
                "base".to_string()
            } else {
                r.delta_points.map_or("-".to_string(), |d| format!("{d:+.1}"))
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>9}  {:>7}  {:>6}",
                r.label,
                pct(r.accuracy),
                r.mean_iterations.map_or("-".to_string(), |m| format!("{m:.2}")),
                delta,
                r.n_scored
            );
        }
        out
    }
}
