//! The questioner → answerer → reasoner loop.
//!
//! Each task runs as follows. The caption is fetched once. Round 1 asks the
//! questioner with the first-round prompt; later rounds use the follow-up
//! prompt with the full history and the previous analysis. Every parsed
//! sub-question is answered on its own, then the reasoner either commits to
//! a choice or declares itself unsure. An unsure verdict at the iteration
//! bound is replaced by a forced choice from the finalizer prompt (index 0 if
//! even that is unparseable). Backend failures and a questioner that
//! produces no sub-questions twice in a row abort the task; the transcript
//! keeps the completed rounds and the reason.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendError, Backends, VqaRequest};
use crate::config::RunConfig;
use crate::parse::{extract_choice, parse_reasoner, parse_subquestions, UnsureDetector};
use crate::preprocess::rewrite_task;
use crate::prompt::{
    build_answerer, build_captioner, build_finalizer, build_questioner_first, build_questioner_followup,
    build_reasoner, PromptRole, PromptSet,
};
use crate::types::{CallRecord, IterationRecord, QaPair, Role, TaskInstance, TaskKind, Transcript, Verdict};

/// Prepended to the questioner prompt when its first reply held no questions.
pub const FORMAT_REMINDER: &str = "Your previous reply contained no sub-questions. Reply only with a numbered \
list of sub-questions, one per line, each ending with a question mark.";

/// Stored in place of an empty sub-answer.
pub const EMPTY_ANSWER: &str = "(no answer)";

/// Stored in place of an empty reasoner analysis.
pub const EMPTY_ANALYSIS: &str = "(the reasoner gave no analysis)";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("transcript sink failed: {0}")]
    Sink(#[from] std::io::Error),
    #[error("no tasks given")]
    EmptyInput,
}

/// Most backend calls one task can make: the caption, then per round up to
/// two questioner calls, one answer per sub-question and one reasoner call,
/// then one finalizer call.
pub fn call_budget(config: &RunConfig) -> u64 {
    1 + config.max_iterations as u64 * (2 + config.max_subquestions as u64 + 1) + 1
}

struct Abort(String);

impl From<BackendError> for Abort {
    fn from(e: BackendError) -> Self {
        Abort(format!("backend failure: {e}"))
    }
}

impl From<crate::prompt::PromptError> for Abort {
    fn from(e: crate::prompt::PromptError) -> Self {
        Abort(format!("prompt construction failed: {e}"))
    }
}

impl From<crate::types::TranscriptError> for Abort {
    fn from(e: crate::types::TranscriptError) -> Self {
        Abort(format!("transcript invariant violated: {e}"))
    }
}

pub struct Engine {
    backends: Backends,
    config: RunConfig,
    prompts: PromptSet,
    detector: UnsureDetector,
}

impl Engine {
    pub fn new(backends: Backends, config: RunConfig, prompts: PromptSet) -> Self {
        let detector = config.unsure_detector();
        Engine {
            backends,
            config,
            prompts,
            detector,
        }
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn timed<T>(
        &self,
        calls: &mut Vec<CallRecord>,
        role: Role,
        iteration: u32,
        f: impl FnOnce() -> T,
    ) -> T {
        let (out, ms) = timed(self.config.record_timings, f);
        calls.push(CallRecord {
            role,
            iteration,
            wall_clock_ms: ms,
        });
        out
    }

    /// Runs one task to completion. Never panics on backend behaviour;
    /// failures end up in `Transcript::aborted`.
    pub fn run_task(&self, task: &TaskInstance) -> Transcript {
        let mut tr = Transcript::new(
            task.id.clone(),
            "",
            self.config.max_iterations,
            self.backends.fingerprint(),
        );
        let mut calls = Vec::new();
        if let Err(Abort(reason)) = self.drive(task, &mut tr, &mut calls) {
            log::warn!("task {} aborted: {reason}", task.id);
            tr.aborted = Some(reason);
        }
        tr.calls = calls;
        tr
    }

    fn drive(&self, task: &TaskInstance, tr: &mut Transcript, calls: &mut Vec<CallRecord>) -> Result<(), Abort> {
        task.validate().map_err(|e| Abort(format!("invalid task: {e}")))?;
        let rewritten;
        let task = if task.task_kind == TaskKind::VcrQa && !task.region_tags.is_empty() {
            rewritten = rewrite_task(task).map_err(|e| Abort(format!("preprocessing failed: {e}")))?;
            &rewritten
        } else {
            task
        };
        let kind = task.task_kind;
        let tpl = |role| self.prompts.get(kind, role);
        let max_q = self.config.max_subquestions;
        let temp = self.config.temperature;

        let caption_prompt = build_captioner(tpl(PromptRole::Captioner))?;
        tr.caption = self.timed(calls, Role::Captioner, 0, || {
            self.backends.caption(&task.image_ref, &caption_prompt)
        })?;

        let mut history: Vec<QaPair> = Vec::new();
        let mut asked: HashSet<String> = HashSet::new();
        let mut analysis = String::new();
        for t in 1..=self.config.max_iterations {
            let prompt = if t == 1 {
                build_questioner_first(task, &tr.caption, max_q, tpl(PromptRole::QuestionerFirst))?
            } else {
                build_questioner_followup(
                    task,
                    &tr.caption,
                    &history,
                    &analysis,
                    max_q,
                    tpl(PromptRole::QuestionerFollowup),
                )?
            };
            let questions = self.ask(calls, t, &prompt, temp)?;
            let fresh: Vec<String> = questions
                .iter()
                .filter(|q| !asked.contains(&q.to_lowercase()))
                .cloned()
                .collect();
            // a round that only repeats earlier questions is asked again as is
            let questions = if fresh.is_empty() { questions } else { fresh };
            asked.extend(questions.iter().map(|q| q.to_lowercase()));

            let answers = self.answer_all(calls, t, task, &questions)?;
            let pairs: Vec<QaPair> = questions
                .into_iter()
                .zip(answers)
                .map(|(q, a)| QaPair {
                    sub_question: q,
                    sub_answer: if a.trim().is_empty() { EMPTY_ANSWER.to_string() } else { a.trim().to_string() },
                    iteration: t,
                })
                .collect();
            history.extend(pairs.iter().cloned());

            let prompt = build_reasoner(task, &tr.caption, &history, tpl(PromptRole::Reasoner))?;
            let req = self.backends.chat_request(Role::Reasoner, prompt, temp);
            let req = self.with_limits(req);
            let raw = self.timed(calls, Role::Reasoner, t, || self.backends.chat_complete(Role::Reasoner, &req))?;
            let parsed = parse_reasoner(&raw, &task.answer_space, &self.detector);
            analysis = if parsed.analysis.trim().is_empty() {
                EMPTY_ANALYSIS.to_string()
            } else {
                parsed.analysis
            };
            let mut verdict = parsed.verdict;

            if verdict.is_unsure() && t == self.config.max_iterations {
                let prompt = build_finalizer(task, &tr.caption, &history, &analysis, tpl(PromptRole::Finalizer))?;
                let req = self.with_limits(self.backends.chat_request(Role::Finalizer, prompt, temp));
                let raw =
                    self.timed(calls, Role::Finalizer, t, || self.backends.chat_complete(Role::Finalizer, &req))?;
                let choice = extract_choice(&raw, &task.answer_space).unwrap_or(0);
                verdict = Verdict::forced(choice, raw);
            }

            let done = !verdict.is_unsure();
            tr.append_iteration(IterationRecord {
                index: t,
                sub_qas: pairs,
                reasoner_analysis: analysis.clone(),
                verdict,
            })?;
            if done {
                break;
            }
        }
        Ok(())
    }

    fn with_limits(&self, mut req: crate::backend::ChatRequest) -> crate::backend::ChatRequest {
        req.max_output_tokens = self.config.max_output_tokens;
        req
    }

    /// Questioner turn with one format-reminder retry.
    fn ask(&self, calls: &mut Vec<CallRecord>, t: u32, prompt: &str, temp: f64) -> Result<Vec<String>, Abort> {
        let max_q = self.config.max_subquestions;
        let req = self.with_limits(self.backends.chat_request(Role::Questioner, prompt, temp));
        let raw = self.timed(calls, Role::Questioner, t, || self.backends.chat_complete(Role::Questioner, &req))?;
        if let Ok(p) = parse_subquestions(&raw, max_q) {
            return Ok(p.questions);
        }
        log::info!("questioner reply had no sub-questions, retrying once");
        let retry_prompt = format!("{FORMAT_REMINDER}\n\n{prompt}");
        let req = self.with_limits(self.backends.chat_request(Role::Questioner, retry_prompt, temp));
        let raw = self.timed(calls, Role::Questioner, t, || self.backends.chat_complete(Role::Questioner, &req))?;
        parse_subquestions(&raw, max_q)
            .map(|p| p.questions)
            .map_err(|_| Abort(format!("questioner produced no sub-questions in round {t}, even after a retry")))
    }

    /// Answers in parse order; concurrently when enabled.
    fn answer_all(
        &self,
        calls: &mut Vec<CallRecord>,
        t: u32,
        task: &TaskInstance,
        questions: &[String],
    ) -> Result<Vec<String>, Abort> {
        let tpl = self.prompts.get(task.task_kind, PromptRole::Answerer);
        let requests: Vec<VqaRequest> = questions
            .iter()
            .map(|q| {
                Ok(VqaRequest {
                    image_ref: task.image_ref.clone(),
                    question: q.clone(),
                    prompt: build_answerer(q, tpl)?,
                })
            })
            .collect::<Result<_, Abort>>()?;
        let record = self.config.record_timings;
        let results: Vec<(Result<String, BackendError>, u64)> =
            if self.config.parallel_subanswers && requests.len() > 1 {
                std::thread::scope(|s| {
                    let handles: Vec<_> = requests
                        .iter()
                        .map(|r| s.spawn(move || timed(record, || self.backends.vqa_answer(r))))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| {
                            h.join()
                                .unwrap_or_else(|_| (Err(BackendError::Fatal("answerer panicked".into())), 0))
                        })
                        .collect()
                })
            } else {
                requests
                    .iter()
                    .map(|r| timed(record, || self.backends.vqa_answer(r)))
                    .collect()
            };
        let mut out = Vec::with_capacity(results.len());
        for (result, ms) in results {
            calls.push(CallRecord {
                role: Role::Answerer,
                iteration: t,
                wall_clock_ms: ms,
            });
            out.push(result?);
        }
        Ok(out)
    }

    /// Runs every task with at most `concurrency_limit` in flight. Output and
    /// sink order follow the input order.
    pub fn run_batch(
        &self,
        tasks: &[TaskInstance],
        sink: Option<&mut (dyn Write + Send)>,
    ) -> Result<BatchResult, EngineError> {
        if tasks.is_empty() {
            return Err(EngineError::EmptyInput);
        }
        let workers = self.config.concurrency_limit.min(tasks.len()).max(1);
        let ordered = Mutex::new(OrderedSink::new(tasks.len(), sink));
        let in_flight = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let next = AtomicUsize::new(0);

        let work = || -> Result<(), EngineError> {
            loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= tasks.len() {
                    return Ok(());
                }
                let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                let tr = self.run_task(&tasks[i]);
                in_flight.fetch_sub(1, Ordering::SeqCst);
                log::info!(
                    "[{}/{}] {}: {}",
                    i + 1,
                    tasks.len(),
                    tr.task_id,
                    describe(&tr)
                );
                ordered.lock().unwrap_or_else(|e| e.into_inner()).put(i, tr)?;
            }
        };

        if workers == 1 {
            work()?;
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..workers).map(|_| s.spawn(work)).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or(Ok(())))
                    .collect::<Result<Vec<()>, EngineError>>()
            })?;
        }

        let transcripts = ordered.into_inner().unwrap_or_else(|e| e.into_inner()).finish()?;
        let handle = RunHandle {
            run_id: run_id(&self.backends.fingerprint(), &self.config, tasks),
            config: self.config.clone(),
            calls: self.backends.counters().snapshot(),
            iterations: transcripts
                .iter()
                .map(|t| (t.task_id.clone(), t.iteration_count()))
                .collect(),
            peak_in_flight: peak.load(Ordering::SeqCst),
        };
        Ok(BatchResult { transcripts, handle })
    }
}

fn timed<T>(record: bool, f: impl FnOnce() -> T) -> (T, u64) {
    if !record {
        return (f(), 0);
    }
    let start = std::time::Instant::now();
    let out = f();
    (out, start.elapsed().as_millis() as u64)
}

fn describe(tr: &Transcript) -> String {
    if let Some(reason) = &tr.aborted {
        return format!("aborted ({reason})");
    }
    match &tr.final_verdict {
        Some(v) if v.is_forced() => format!("forced {} after {} rounds", v.answer().unwrap_or(0) + 1, tr.iteration_count()),
        Some(v) => format!("answer {} after {} rounds", v.answer().map_or(0, |a| a + 1), tr.iteration_count()),
        None => "no verdict".to_string(),
    }
}

fn run_id(fingerprint: &str, config: &RunConfig, tasks: &[TaskInstance]) -> String {
    let mut h = Sha256::new();
    h.update(fingerprint.as_bytes());
    h.update(serde_json::to_string(config).unwrap_or_default().as_bytes());
    for t in tasks {
        h.update(t.id.as_bytes());
        h.update([0]);
    }
    format!("run-{}", &hex::encode(h.finalize())[..12])
}

/// Writes transcripts in input order as they complete.
struct OrderedSink<'a> {
    slots: Vec<Option<Transcript>>,
    written: usize,
    out: Option<&'a mut (dyn Write + Send)>,
}

impl<'a> OrderedSink<'a> {
    fn new(n: usize, out: Option<&'a mut (dyn Write + Send)>) -> Self {
        OrderedSink {
            slots: vec![None; n],
            written: 0,
            out,
        }
    }

    fn put(&mut self, i: usize, tr: Transcript) -> Result<(), EngineError> {
        self.slots[i] = Some(tr);
        while self.written < self.slots.len() {
            let Some(tr) = &self.slots[self.written] else { break };
            if let Some(out) = self.out.as_mut() {
                let line = tr
                    .to_json_line()
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
                writeln!(out, "{line}")?;
            }
            self.written += 1;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<Transcript>, EngineError> {
        if let Some(out) = self.out.as_mut() {
            out.flush()?;
        }
        Ok(self.slots.into_iter().map(|s| s.expect("every task ran")).collect())
    }
}

/// State of a finished batch.
#[derive(Debug, Clone)]
pub struct RunHandle {
    pub run_id: String,
    pub config: RunConfig,
    /// Backend calls per role, cumulative over the backend bundle's lifetime.
    pub calls: BTreeMap<Role, u64>,
    /// Iterations per task, in input order.
    pub iterations: Vec<(String, usize)>,
    /// Largest number of tasks observed running at once.
    pub peak_in_flight: usize,
}

pub struct BatchResult {
    pub transcripts: Vec<Transcript>,
    pub handle: RunHandle,
}

/// Mean number of rounds over non-aborted transcripts.
pub fn mean_iterations(transcripts: &[Transcript]) -> Result<f64, EngineError> {
    let counts: Vec<usize> = transcripts
        .iter()
        .filter(|t| !t.is_aborted())
        .map(Transcript::iteration_count)
        .collect();
    if counts.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    Ok(counts.iter().sum::<usize>() as f64 / counts.len() as f64)
}

/// The record written next to a run's transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub backend_fingerprint: String,
    pub config: RunConfig,
    pub calls: BTreeMap<Role, u64>,
    pub n_tasks: usize,
    pub n_aborted: usize,
    pub n_forced: usize,
    pub mean_iterations: Option<f64>,
}

impl RunSummary {
    pub fn new(batch: &BatchResult, backend_fingerprint: &str) -> Self {
        let t = &batch.transcripts;
        RunSummary {
            run_id: batch.handle.run_id.clone(),
            backend_fingerprint: backend_fingerprint.to_string(),
            config: batch.handle.config.clone(),
            calls: batch.handle.calls.clone(),
            n_tasks: t.len(),
            n_aborted: t.iter().filter(|x| x.is_aborted()).count(),
            n_forced: t
                .iter()
                .filter(|x| !x.is_aborted() && x.final_verdict.as_ref().is_some_and(Verdict::is_forced))
                .count(),
            mean_iterations: mean_iterations(t).ok(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatRequest, FnChat, FnVision, Matcher, ScriptedChat};
    use crate::types::{AnswerSpace, VerdictKind};
    use std::sync::atomic::AtomicU64;
    use std::sync::Arc;

    fn vcr_task(id: &str) -> TaskInstance {
        TaskInstance {
            id: id.into(),
            image_ref: format!("{id}.jpg"),
            task_kind: TaskKind::VcrQa,
            main_text: "Why are they dressed up?".into(),
            answer_space: AnswerSpace::multiple_choice(["A party.", "A wedding.", "Work.", "A funeral."]),
            gold: Some(1),
            region_tags: vec![],
        }
    }

    fn vision() -> Arc<FnVision> {
        Arc::new(FnVision::new(
            "v",
            |r: &VqaRequest| Ok(format!("about {}", r.question.trim_end_matches('?'))),
            |_i: &str, _p: &str| Ok("two people in formal clothes".into()),
        ))
    }

    fn config() -> RunConfig {
        RunConfig {
            record_timings: false,
            ..RunConfig::default()
        }
    }

    fn engine(chat: ScriptedChat, cfg: RunConfig) -> Engine {
        Engine::new(Backends::paired(Arc::new(chat), vision()), cfg, PromptSet::builtin())
    }

    fn questioner() -> ScriptedChat {
        ScriptedChat::new("c").rule(
            Matcher::Contains("sub-questions".into()),
            Some(Role::Questioner),
            &["1. What are they wearing?\n2. Where are they?"],
        )
    }

    #[test]
    fn confident_first_round_exits_early() {
        let chat = questioner().rule(Matcher::Contains("".into()), Some(Role::Reasoner), &["Wedding attire.\nAnswer: 2"]);
        let e = engine(chat, config());
        let tr = e.run_task(&vcr_task("a"));
        tr.validate().unwrap();
        assert_eq!(tr.iteration_count(), 1);
        assert_eq!(tr.final_verdict.as_ref().unwrap().kind, VerdictKind::Confident { answer: 1 });
        assert_eq!(tr.iterations[0].sub_qas.len(), 2);
        assert_eq!(tr.caption, "two people in formal clothes");
        // early exit: nothing after round 1
        assert_eq!(e.backends().counters().total(), 1 + 1 + 2 + 1);
    }

    #[test]
    fn unsure_then_confident_takes_two_rounds() {
        let chat = questioner().rule(
            Matcher::Contains("".into()),
            Some(Role::Reasoner),
            &["We are not sure what the event is.", "They wear a wedding dress and a suit.\nAnswer: 2"],
        );
        let tr = engine(chat, config()).run_task(&vcr_task("a"));
        tr.validate().unwrap();
        assert_eq!(tr.iteration_count(), 2);
        assert!(tr.iterations[0].verdict.is_unsure());
        assert_eq!(tr.iterations[0].reasoner_analysis, "We are not sure what the event is.");
        assert_eq!(tr.final_verdict.unwrap().answer(), Some(1));
    }

    #[test]
    fn always_unsure_ends_forced_at_the_bound() {
        let chat = questioner()
            .rule(Matcher::Contains("".into()), Some(Role::Reasoner), &["We are not sure."])
            .rule(Matcher::Contains("".into()), Some(Role::Finalizer), &["Best guess.\nAnswer: 3"]);
        let tr = engine(chat, config()).run_task(&vcr_task("a"));
        tr.validate().unwrap();
        assert_eq!(tr.iteration_count(), 4);
        assert_eq!(tr.final_verdict.as_ref().unwrap().kind, VerdictKind::Forced { answer: 2 });
        let back = Transcript::from_json_line(&tr.to_json_line().unwrap()).unwrap();
        assert_eq!(back, tr);
    }

    #[test]
    fn unparseable_finalizer_defaults_to_first_choice() {
        let chat = questioner()
            .rule(Matcher::Contains("".into()), Some(Role::Reasoner), &["hmm"])
            .rule(Matcher::Contains("".into()), Some(Role::Finalizer), &["no idea at all"]);
        let cfg = RunConfig {
            max_iterations: 2,
            ..config()
        };
        let tr = engine(chat, cfg).run_task(&vcr_task("a"));
        assert_eq!(tr.final_verdict.as_ref().unwrap().kind, VerdictKind::Forced { answer: 0 });
    }

    #[test]
    fn malformed_questioner_is_retried_once_then_aborts() {
        let prompts_seen = Arc::new(Mutex::new(Vec::new()));
        let seen = prompts_seen.clone();
        let chat = FnChat::new("c", move |_role, req: &ChatRequest| {
            seen.lock().unwrap().push(req.prompt().to_string());
            Ok("I cannot help with that.".to_string())
        });
        let e = Engine::new(Backends::paired(Arc::new(chat), vision()), config(), PromptSet::builtin());
        let tr = e.run_task(&vcr_task("a"));
        assert!(tr.aborted.as_ref().unwrap().contains("no sub-questions"));
        tr.validate().unwrap();
        let seen = prompts_seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        assert!(seen[1].starts_with(FORMAT_REMINDER));
    }

    #[test]
    fn retry_recovers() {
        let chat = ScriptedChat::new("c")
            .rule(Matcher::Contains(FORMAT_REMINDER.into()), Some(Role::Questioner), &["1. Is it night?"])
            .rule(Matcher::Contains("".into()), Some(Role::Questioner), &["Sure."])
            .rule(Matcher::Contains("".into()), Some(Role::Reasoner), &["Answer: 1"]);
        let tr = engine(chat, config()).run_task(&vcr_task("a"));
        assert!(tr.aborted.is_none());
        assert_eq!(tr.iterations[0].sub_qas[0].sub_question, "Is it night?");
    }

    #[test]
    fn repeated_questions_are_dropped_unless_nothing_is_left() {
        let chat = ScriptedChat::new("c")
            .rule(
                Matcher::Contains("".into()),
                Some(Role::Questioner),
                &["1. Is it day?\n2. Who is there?", "1. Is it day?\n2. What is the weather?", "1. is it day?"],
            )
            .rule(Matcher::Contains("".into()), Some(Role::Reasoner), &["We are not sure.", "We are not sure.", "Answer: 4"]);
        let tr = engine(chat, config()).run_task(&vcr_task("a"));
        let qs: Vec<Vec<&str>> = tr
            .iterations
            .iter()
            .map(|it| it.sub_qas.iter().map(|q| q.sub_question.as_str()).collect())
            .collect();
        assert_eq!(qs, [vec!["Is it day?", "Who is there?"], vec!["What is the weather?"], vec!["is it day?"]]);
    }

    #[test]
    fn followup_prompt_contains_history_and_analysis() {
        let prompts = Arc::new(Mutex::new(Vec::new()));
        let seen = prompts.clone();
        let replies = Arc::new(AtomicU64::new(0));
        let chat = FnChat::new("c", move |role, req: &ChatRequest| {
            if role == Role::Questioner {
                seen.lock().unwrap().push(req.prompt().to_string());
                let n = replies.fetch_add(1, Ordering::SeqCst);
                return Ok(format!("1. Question number {n}?"));
            }
            Ok("We are not sure; missing the venue.".to_string())
        });
        let cfg = RunConfig {
            max_iterations: 3,
            ..config()
        };
        let e = Engine::new(Backends::paired(Arc::new(chat), vision()), cfg, PromptSet::builtin());
        e.run_task(&vcr_task("a"));
        let p = prompts.lock().unwrap();
        assert_eq!(p.len(), 3);
        assert!(!p[0].contains("Sub-question"));
        assert!(p[1].contains("Sub-question 1: Question number 0?\nSub-answer 1: about Question number 0"));
        assert!(p[1].contains("missing the venue"));
        // every earlier round is carried forward
        assert!(p[2].contains("Question number 0?") && p[2].contains("Question number 1?"));
    }

    #[test]
    fn backend_failure_aborts_only_that_task() {
        let chat = questioner().rule(Matcher::Contains("".into()), Some(Role::Reasoner), &["Answer: 1"]);
        let vision = Arc::new(FnVision::new(
            "v",
            |r: &VqaRequest| {
                if r.image_ref == "bad.jpg" {
                    Err(BackendError::Fatal("401".into()))
                } else {
                    Ok("yes".into())
                }
            },
            |_i: &str, _p: &str| Ok("cap".into()),
        ));
        let cfg = RunConfig {
            concurrency_limit: 3,
            ..config()
        };
        let e = Engine::new(Backends::paired(Arc::new(chat), vision), cfg, PromptSet::builtin());
        let tasks: Vec<_> = ["t0", "t1", "bad", "t3", "t4"].iter().map(|id| vcr_task(id)).collect();
        let mut buf: Vec<u8> = Vec::new();
        let out = e.run_batch(&tasks, Some(&mut buf)).unwrap();
        let ids: Vec<_> = out.transcripts.iter().map(|t| t.task_id.as_str()).collect();
        assert_eq!(ids, ["t0", "t1", "bad", "t3", "t4"]);
        assert_eq!(out.transcripts.iter().filter(|t| t.is_aborted()).count(), 1);
        assert!(out.transcripts[2].is_aborted());
        let lines: Vec<_> = String::from_utf8(buf).unwrap().lines().map(str::to_string).collect();
        assert_eq!(lines.len(), 5);
        for (line, tr) in lines.iter().zip(&out.transcripts) {
            assert_eq!(&Transcript::from_json_line(line).unwrap(), tr);
        }
        assert!(out.handle.peak_in_flight <= 3);
    }

    #[test]
    fn concurrency_limit_is_respected() {
        let chat = FnChat::new("c", |role, _req: &ChatRequest| {
            std::thread::sleep(std::time::Duration::from_millis(5));
            Ok(if role == Role::Questioner { "1. Is it day?" } else { "Answer: 1" }.to_string())
        });
        let cfg = RunConfig {
            concurrency_limit: 3,
            ..config()
        };
        let e = Engine::new(Backends::paired(Arc::new(chat), vision()), cfg, PromptSet::builtin());
        let tasks: Vec<_> = (0..10).map(|i| vcr_task(&format!("t{i}"))).collect();
        let out = e.run_batch(&tasks, None).unwrap();
        assert_eq!(out.transcripts.len(), 10);
        assert!(out.handle.peak_in_flight <= 3 && out.handle.peak_in_flight >= 2);
        assert!(out.transcripts.iter().zip(&tasks).all(|(tr, t)| tr.task_id == t.id));
    }

    #[test]
    fn mean_iterations_examples() {
        let mk = |n: u32| {
            let mut t = Transcript::new("x", "c", 4, "f");
            for i in 1..=n {
                let v = if i == n { Verdict::confident(0, "Answer: 1") } else { Verdict::unsure("not sure") };
                t.append_iteration(IterationRecord {
                    index: i,
                    sub_qas: vec![QaPair {
                        sub_question: "q?".into(),
                        sub_answer: "a".into(),
                        iteration: i,
                    }],
                    reasoner_analysis: "a".into(),
                    verdict: v,
                })
                .unwrap();
            }
            t
        };
        assert_eq!(mean_iterations(&[mk(1), mk(2), mk(2), mk(3)]).unwrap(), 2.0);
        assert_eq!(mean_iterations(&[mk(1), mk(1)]).unwrap(), 1.0);
        let batch: Vec<_> = [1, 2, 2, 2, 2, 2, 2, 2, 2, 1].iter().map(|&n| mk(n)).collect();
        assert!((mean_iterations(&batch).unwrap() - 1.8).abs() < 1e-12);
        assert!(matches!(mean_iterations(&[]), Err(EngineError::EmptyInput)));
    }

    #[test]
    fn vcr_person_tags_are_rewritten_before_prompting() {
        let seen = Arc::new(Mutex::new(String::new()));
        let s2 = seen.clone();
        let chat = FnChat::new("c", move |role, req: &ChatRequest| {
            if role == Role::Questioner {
                *s2.lock().unwrap() = req.prompt().to_string();
                return Ok("1. Is it day?".into());
            }
            Ok("Answer: 1".into())
        });
        let mut task = vcr_task("a");
        task.main_text = "Why is [person1] smiling?".into();
        task.region_tags = vec![crate::types::PersonRegion::new(1, [0.0, 0.0, 10.0, 10.0], 300.0)];
        let e = Engine::new(Backends::paired(Arc::new(chat), vision()), config(), PromptSet::builtin());
        e.run_task(&task);
        assert!(seen.lock().unwrap().contains("Why is person on the left smiling?"));
    }
}
