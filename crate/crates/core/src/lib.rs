//! Iterative divide-and-conquer reasoning over images.
//!
//! A questioner LLM decomposes a main question (or an entailment hypothesis)
//! into sub-questions, a vision answerer responds to each of them separately,
//! and a reasoner LLM either commits to an answer or asks for another round.
//! Rounds repeat until the reasoner is confident or the iteration bound is
//! reached, at which point a best-guess answer is forced.
//!
//! The crate is organised by responsibility:
//!
//! * [`types`] holds the domain values and the transcript construction rules.
//! * [`prompt`] renders role prompts from editable bracket-placeholder templates.
//! * [`parse`] turns raw model text into sub-questions and verdicts.
//! * [`backend`] binds roles to HTTP services, scripted fixtures or cassettes.
//! * [`preprocess`] rewrites VCR person tags into spatial words.
//! * [`dataset`] loads line-delimited task records and samples them.
//! * [`engine`] runs the loop for one task or a batch.
//! * [`eval`] scores transcripts and compares ablation runs.
//! * [`sim`] generates deterministic scene-graph worlds with oracle agents.

pub mod backend;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod eval;
pub mod parse;
pub mod preprocess;
pub mod prompt;
pub mod rng;
pub mod sim;
pub mod types;

pub use config::RunConfig;
pub use types::{
    AnswerSpace, EntailmentLabel, IterationRecord, PersonRegion, QaPair, TaskInstance, TaskKind,
    Transcript, Verdict, VerdictKind,
};
