//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string. The inner functions return plain
//! `Result<_, String>` so they can be unit tested natively.

use std::sync::Arc;

use idealgpt_core::backend::Backends;
use idealgpt_core::engine::Engine;
use idealgpt_core::eval::score;
use idealgpt_core::parse::{parse_reasoner, UnsureDetector};
use idealgpt_core::preprocess::{bin_person, rewrite_vcr_text};
use idealgpt_core::prompt::PromptSet;
use idealgpt_core::sim::{generate_world, OracleWorld, WorldParams};
use idealgpt_core::{AnswerSpace, PersonRegion, RunConfig, Transcript, VerdictKind};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, PartialEq)]
pub struct BinResult {
    pub label: String,
    pub center: f64,
    pub rewritten: String,
}

pub fn bin_inner(x_min: f64, x_max: f64, width: f64, text: &str) -> Result<BinResult, String> {
    let region = PersonRegion::new(1, [x_min, 0.0, x_max, 1.0], width);
    let label = bin_person(&region).map_err(|e| e.to_string())?;
    let rewritten = rewrite_vcr_text(text, &[region]).map_err(|e| e.to_string())?;
    Ok(BinResult {
        label: label.rendered().to_string(),
        center: (x_min + x_max) / 2.0,
        rewritten,
    })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct SweepRow {
    pub max_iterations: u32,
    pub accuracy: f64,
    pub mean_iterations: f64,
    pub forced: usize,
}

#[derive(Debug, Serialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Trace of the first task under the largest bound.
    pub sample: Vec<String>,
}

pub struct SweepParams {
    pub seed: u64,
    pub tasks: usize,
    pub facts: usize,
    pub required_fraction: f64,
    pub noise: f64,
    pub questions_per_round: usize,
    pub max_bound: u32,
}

pub fn sweep_inner(p: &SweepParams) -> Result<Sweep, String> {
    if p.max_bound == 0 || p.max_bound > 8 {
        return Err("iteration bound must be between 1 and 8".into());
    }
    let params = WorldParams {
        seed: p.seed,
        n_tasks: p.tasks,
        facts_per_task: p.facts,
        required_fraction: p.required_fraction,
    };
    let world = Arc::new(generate_world(&params).map_err(|e| e.to_string())?);
    let tasks = world.tasks();
    let mut rows = Vec::new();
    let mut sample = Vec::new();
    for bound in 1..=p.max_bound {
        let oracle = Arc::new(OracleWorld::new(world.clone(), p.noise, p.questions_per_round));
        // no clocks or threads in the browser
        let config = RunConfig {
            max_iterations: bound,
            max_subquestions: p.questions_per_round,
            record_timings: false,
            concurrency_limit: 1,
            parallel_subanswers: false,
            ..RunConfig::default()
        };
        config.validate().map_err(|e| e.to_string())?;
        let engine = Engine::new(Backends::paired(oracle.clone(), oracle), config, PromptSet::builtin());
        let batch = engine.run_batch(&tasks, None).map_err(|e| e.to_string())?;
        let report = score(&batch.transcripts, &tasks).map_err(|e| e.to_string())?;
        rows.push(SweepRow {
            max_iterations: bound,
            accuracy: report.accuracy.unwrap_or(0.0),
            mean_iterations: report.mean_iterations.unwrap_or(0.0),
            forced: report.forced,
        });
        if bound == p.max_bound {
            sample = trace(&batch.transcripts[0]);
        }
    }
    Ok(Sweep { rows, sample })
}

fn trace(t: &Transcript) -> Vec<String> {
    let mut lines = vec![format!("Caption: {}", t.caption)];
    for it in &t.iterations {
        lines.push(format!("Round {}", it.index));
        for qa in &it.sub_qas {
            lines.push(format!("  Q: {}", qa.sub_question));
            lines.push(format!("  A: {}", qa.sub_answer));
        }
        lines.push(format!("  Reasoner: {}", it.reasoner_analysis));
        lines.push(format!("  Verdict: {}", verdict_text(&it.verdict.kind)));
    }
    if let Some(v) = &t.final_verdict {
        lines.push(format!("Final: {}", verdict_text(&v.kind)));
    }
    lines
}

fn verdict_text(kind: &VerdictKind) -> String {
    match kind {
        VerdictKind::Confident { answer } => format!("choice {answer}"),
        VerdictKind::Unsure => "unsure".into(),
        VerdictKind::Forced { answer } => format!("forced choice {answer}"),
    }
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ReasonerReading {
    pub unsure: bool,
    pub answer: Option<usize>,
    pub label: Option<String>,
    pub analysis: String,
}

/// `choices` holds one answer per line; empty means entailment labels.
pub fn read_reasoner_inner(text: &str, choices: &str) -> ReasonerReading {
    let lines: Vec<&str> = choices.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let space = if lines.is_empty() {
        AnswerSpace::EntailmentLabels
    } else {
        AnswerSpace::multiple_choice(lines)
    };
    let parsed = parse_reasoner(text, &space, &UnsureDetector::default());
    let answer = parsed.verdict.answer();
    ReasonerReading {
        unsure: answer.is_none(),
        answer,
        label: answer.and_then(|i| space.label(i)).map(str::to_string),
        analysis: parsed.analysis,
    }
}

fn to_json(value: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn bin(x_min: f64, x_max: f64, width: f64, text: &str) -> Result<String, JsError> {
    let r = bin_inner(x_min, x_max, width, text).map_err(|e| JsError::new(&e))?;
    to_json(&r)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    seed: u32,
    tasks: usize,
    facts: usize,
    required_fraction: f64,
    noise: f64,
    questions_per_round: usize,
    max_bound: u32,
) -> Result<String, JsError> {
    let p = SweepParams {
        seed: seed as u64,
        tasks,
        facts,
        required_fraction,
        noise,
        questions_per_round,
        max_bound,
    };
    to_json(&sweep_inner(&p).map_err(|e| JsError::new(&e))?)
}

#[wasm_bindgen]
pub fn read_reasoner(text: &str, choices: &str) -> Result<String, JsError> {
    to_json(&read_reasoner_inner(text, choices))
}
