//! Acceptance checks. Prints one line per criterion and exits nonzero if any
//! required criterion fails.

mod corpus;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use idealgpt_core::backend::{
    BackendError, Backends, Cassette, ChatBackend, FnChat, FnVision, RecordingChat, RecordingVision,
    ReplayChat, ReplayVision, VisionBackend,
};
use idealgpt_core::engine::{call_budget, mean_iterations, Engine};
use idealgpt_core::eval::score;
use idealgpt_core::parse::{detect_unsure, parse_reasoner, parse_subquestions, ParseError, UnsureDetector};
use idealgpt_core::preprocess::{bin_person, SpatialLabel};
use idealgpt_core::prompt::PromptSet;
use idealgpt_core::rng::DetRng;
use idealgpt_core::sim::{generate_world, FactKey, OracleWorld, SceneGraph, World, WorldParams};
use idealgpt_core::types::Role;
use idealgpt_core::{
    AnswerSpace, IterationRecord, PersonRegion, QaPair, RunConfig, TaskInstance, TaskKind, Transcript,
    Verdict, VerdictKind,
};

const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(30);
const REPLAY_TIME_LIMIT: Duration = Duration::from_secs(10);
const AGGREGATE_TOLERANCE_POINTS: f64 = 0.05;
const RANDOM_TOLERANCE_POINTS: f64 = 3.0;
const RANDOM_TASKS: usize = 2400;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Oracle world helpers, written against the scene graph data alone.

fn world_params() -> WorldParams {
    WorldParams {
        seed: 1,
        n_tasks: 50,
        facts_per_task: 6,
        required_fraction: 1.0,
    }
}

const QUESTIONS_PER_ROUND: usize = 3;

fn oracle_engine(world: &Arc<World>, max_iterations: u32) -> Engine {
    let oracle = Arc::new(OracleWorld::new(world.clone(), 0.0, QUESTIONS_PER_ROUND));
    let backends = Backends::paired(oracle.clone(), oracle);
    let config = RunConfig {
        max_iterations,
        max_subquestions: QUESTIONS_PER_ROUND,
        concurrency_limit: 4,
        record_timings: false,
        ..RunConfig::default()
    };
    Engine::new(backends, config, PromptSet::builtin())
}

fn truth(scene: &SceneGraph, fact: &FactKey) -> String {
    let yes_no = |b: bool| if b { "yes" } else { "no" }.to_string();
    let ent = |id: &str| scene.entities.iter().find(|e| e.id == id).expect("entity");
    match fact {
        FactKey::Color { entity } => ent(entity).attributes["color"].clone(),
        FactKey::Action { entity } => ent(entity).attributes["action"].clone(),
        FactKey::Attire { entity } => ent(entity).attributes["attire"].clone(),
        FactKey::Position { entity } => {
            let pos = serde_json::to_value(ent(entity).position).unwrap();
            match pos.as_str().unwrap() {
                "left" => "on the left",
                "middle" => "in the middle",
                _ => "on the right",
            }
            .to_string()
        }
        FactKey::Relation { subject, predicate, object } => yes_no(
            scene
                .relations
                .iter()
                .any(|r| &r.subject == subject && &r.predicate == predicate && &r.object == object),
        ),
        FactKey::Flag { name } => yes_no(scene.flags[name]),
    }
}

/// Simulates the oracle loop for one scene: (iterations used, predicted index).
fn simulate(scene: &SceneGraph, max_iterations: usize) -> (usize, usize) {
    let required = scene.required_facts.len();
    let needed = required.div_ceil(QUESTIONS_PER_ROUND);
    let rounds = needed.min(max_iterations);
    let asked = (rounds * QUESTIONS_PER_ROUND).min(scene.facts.len());
    let known: HashMap<&FactKey, String> = scene.facts[..asked].iter().map(|f| (f, truth(scene, f))).collect();
    let contradictions: Vec<usize> = scene
        .choice_claims
        .iter()
        .map(|claims| {
            claims
                .iter()
                .filter(|c| known.get(&c.fact).is_some_and(|v| !v.eq_ignore_ascii_case(c.value.trim())))
                .count()
        })
        .collect();
    let mut best = 0;
    for (i, &c) in contradictions.iter().enumerate() {
        if c < contradictions[best] {
            best = i;
        }
    }
    (rounds, best)
}

fn accuracy_of(transcripts: &[Transcript], tasks: &[TaskInstance]) -> Result<f64, String> {
    score(transcripts, tasks)
        .map_err(|e| e.to_string())?
        .accuracy
        .ok_or_else(|| "nothing scored".to_string())
}

fn oracle_convergence() -> Check {
    let start = Instant::now();
    let world = Arc::new(generate_world(&world_params()).map_err(|e| e.to_string())?);
    let tasks = world.tasks();
    let expected: Vec<(usize, usize)> = world.scenes.iter().map(|s| simulate(s, 4)).collect();
    let expected_mean = expected.iter().map(|e| e.0).sum::<usize>() as f64 / expected.len() as f64;
    let expected_correct = world
        .scenes
        .iter()
        .zip(&expected)
        .filter(|(s, e)| e.1 == s.gold_answer)
        .count();
    ensure(expected_mean == 2.0 && expected_correct == tasks.len(), || {
        format!("brute force disagrees with the world: mean {expected_mean}, correct {expected_correct}")
    })?;

    let batch = oracle_engine(&world, 4).run_batch(&tasks, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    for (tr, (iters, _)) in batch.transcripts.iter().zip(&expected) {
        ensure(tr.iteration_count() == *iters && !tr.is_aborted(), || {
            format!("{}: {} iterations, expected {iters}", tr.task_id, tr.iteration_count())
        })?;
    }
    let acc = accuracy_of(&batch.transcripts, &tasks)?;
    let mean = mean_iterations(&batch.transcripts).map_err(|e| e.to_string())?;
    ensure(acc == 1.0, || format!("accuracy {acc}"))?;
    ensure(mean == 2.0, || format!("mean iterations {mean}"))?;
    ensure(elapsed < ORACLE_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "accuracy {:.1}%, mean_iterations {mean:.1}, {} tasks in {:.2}s",
        acc * 100.0,
        tasks.len(),
        elapsed.as_secs_f64()
    ))
}

fn iteration_ablation() -> Check {
    let world = Arc::new(generate_world(&world_params()).map_err(|e| e.to_string())?);
    let tasks = world.tasks();
    let mut acc = HashMap::new();
    for max in [1u32, 4] {
        let batch = oracle_engine(&world, max).run_batch(&tasks, None).map_err(|e| e.to_string())?;
        for (tr, scene) in batch.transcripts.iter().zip(&world.scenes) {
            let (rounds, predicted) = simulate(scene, max as usize);
            let verdict = tr.final_verdict.as_ref().ok_or("missing verdict")?;
            let forced_expected = scene.required_facts.len().div_ceil(QUESTIONS_PER_ROUND) > rounds;
            ensure(verdict.answer() == Some(predicted), || {
                format!("max {max} {}: predicted {predicted}, got {:?}", tr.task_id, verdict.kind)
            })?;
            ensure(verdict.is_forced() == forced_expected, || {
                format!("max {max} {}: forced mismatch", tr.task_id)
            })?;
        }
        acc.insert(max, accuracy_of(&batch.transcripts, &tasks)?);
    }
    let predicted_1 = world
        .scenes
        .iter()
        .filter(|s| simulate(s, 1).1 == s.gold_answer)
        .count() as f64
        / world.scenes.len() as f64;
    ensure(acc[&1] == predicted_1, || {
        format!("accuracy(1) {} differs from brute force {predicted_1}", acc[&1])
    })?;
    ensure(acc[&1] < acc[&4], || format!("accuracy(1) {} is not below accuracy(4) {}", acc[&1], acc[&4]))?;
    Ok(format!(
        "accuracy(1) {:.1}% = brute force {:.1}%, accuracy(4) {:.1}%",
        acc[&1] * 100.0,
        predicted_1 * 100.0,
        acc[&4] * 100.0
    ))
}

// ---------------------------------------------------------------------------
// Replay determinism.

fn replay_tasks() -> Vec<TaskInstance> {
    (0..20)
        .map(|i| TaskInstance {
            id: format!("task-{i:02}"),
            image_ref: format!("images/{i:02}.jpg"),
            task_kind: TaskKind::VcrQa,
            main_text: format!("Case {i:02}: why are the two people together?"),
            answer_space: AnswerSpace::multiple_choice(corpus::VCR_CHOICES),
            gold: Some(i % 4),
            region_tags: Vec::new(),
        })
        .collect()
}

fn case_number(prompt: &str) -> usize {
    prompt
        .split("Case ")
        .nth(1)
        .and_then(|s| s.get(..2))
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

fn scripted_chat() -> FnChat {
    FnChat::new("scripted-chat", |role, req| {
        let p = req.prompt();
        let case = case_number(p);
        Ok(match role {
            Role::Questioner if p.contains("Sub-question 1:") => {
                "1. Where are they?\n2. What time is it?".to_string()
            }
            Role::Questioner => "1. What are they wearing?\n2. Are they holding hands?\n3. Is anyone smiling?".to_string(),
            Role::Reasoner if case.is_multiple_of(3) || p.contains("Where are they?") => {
                format!("The sub-answers settle it. Answer: {}", case % 4 + 1)
            }
            Role::Reasoner => "We are not sure. Still unknown: the setting.".to_string(),
            _ => "Answer: 1".to_string(),
        })
    })
}

fn scripted_vision() -> FnVision {
    FnVision::new(
        "scripted-vqa",
        |req| Ok(format!("{} looks ordinary in {}", req.question.trim_end_matches('?'), req.image_ref)),
        |image, _| Ok(format!("Two people in {image}.")),
    )
}

fn replay_config() -> RunConfig {
    RunConfig {
        record_timings: false,
        parallel_subanswers: true,
        concurrency_limit: 4,
        ..RunConfig::default()
    }
}

fn run_to_file(backends: Backends, tasks: &[TaskInstance], out: &Path) -> Result<(), String> {
    let engine = Engine::new(backends, replay_config(), PromptSet::builtin());
    let mut file = std::fs::File::create(out).map_err(|e| e.to_string())?;
    let batch = engine.run_batch(tasks, Some(&mut file)).map_err(|e| e.to_string())?;
    if let Some(t) = batch.transcripts.iter().find(|t| t.is_aborted()) {
        return Err(format!("{} aborted: {:?}", t.task_id, t.aborted));
    }
    Ok(())
}

fn replay_determinism() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tasks = replay_tasks();
    let cassette_path = dir.path().join("run.cassette.jsonl");
    let recorded = dir.path().join("recorded.jsonl");
    {
        let cassette = Arc::new(Cassette::create(&cassette_path).map_err(|e| e.to_string())?);
        let chat: Arc<dyn ChatBackend> = Arc::new(RecordingChat::new(Arc::new(scripted_chat()), cassette.clone()));
        let vision: Arc<dyn VisionBackend> =
            Arc::new(RecordingVision::new(Arc::new(scripted_vision()), cassette));
        run_to_file(Backends::paired(chat, vision), &tasks, &recorded)?;
    }
    let mut outputs = vec![std::fs::read(&recorded).map_err(|e| e.to_string())?];
    for n in 0..2 {
        let cassette = Arc::new(Cassette::load(&cassette_path).map_err(|e| e.to_string())?);
        let chat: Arc<dyn ChatBackend> = Arc::new(ReplayChat::new("scripted-chat", cassette.clone()));
        let vision: Arc<dyn VisionBackend> = Arc::new(ReplayVision::new("scripted-vqa", cassette));
        let out = dir.path().join(format!("replay-{n}.jsonl"));
        run_to_file(Backends::paired(chat, vision), &tasks, &out)?;
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    let elapsed = start.elapsed();
    let lines = outputs[0].iter().filter(|&&b| b == b'\n').count();
    ensure(lines == tasks.len(), || format!("{lines} transcript lines"))?;
    ensure(outputs[1] == outputs[0] && outputs[2] == outputs[0], || {
        "replayed transcripts differ from the recording".to_string()
    })?;
    let two_round = outputs[0]
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .filter_map(|l| Transcript::from_json_bytes(l).ok())
        .filter(|t| t.iteration_count() == 2)
        .count();
    ensure(two_round > 0, || "no multi-iteration transcripts exercised".to_string())?;
    ensure(elapsed < REPLAY_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "3 files x {} bytes identical, {two_round} two-iteration tasks, {:.2}s",
        outputs[0].len(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// Binning.

fn region(center: i64, width: i64) -> Option<PersonRegion> {
    let half = center.min(width - center);
    (half > 0).then(|| PersonRegion::new(1, [(center - half) as f64, 0.0, (center + half) as f64, 10.0], width as f64))
}

fn expected_bin(center: i64, width: i64) -> SpatialLabel {
    if 3 * center < width {
        SpatialLabel::Left
    } else if 3 * center < 2 * width {
        SpatialLabel::Middle
    } else {
        SpatialLabel::Right
    }
}

fn binning() -> Check {
    let allowed = ["person on the left", "person in the middle", "person on the right"];
    let mut checked = 0;
    let mut seen = std::collections::BTreeSet::new();
    for width in [100i64, 300, 1024] {
        for center in 1..width {
            let r = region(center, width).expect("interior center");
            let label = bin_person(&r).map_err(|e| e.to_string())?;
            ensure(label == expected_bin(center, width), || {
                format!("W={width} c={center}: got {label:?}")
            })?;
            ensure(allowed.contains(&label.rendered()), || format!("rendering {:?}", label.rendered()))?;
            seen.insert(label.rendered());
            if 3 * center == width || 3 * center == 2 * width {
                let right_of = if 3 * center == width { SpatialLabel::Middle } else { SpatialLabel::Right };
                ensure(label == right_of, || format!("boundary W={width} c={center} went {label:?}"))?;
            }
            for k in [2i64, 3, 7] {
                let scaled = region(center * k, width * k).expect("scaled center");
                let scaled_label = bin_person(&scaled).map_err(|e| e.to_string())?;
                ensure(scaled_label == label, || format!("scale {k} W={width} c={center}"))?;
            }
            checked += 1;
        }
    }
    ensure(seen.len() == 3, || format!("renderings seen: {seen:?}"))?;
    let on_boundary = bin_person(&PersonRegion::new(1, [0.0, 0.0, 200.0, 10.0], 300.0)).map_err(|e| e.to_string())?;
    ensure(on_boundary == SpatialLabel::Middle, || "c=W/3 must go to the middle".to_string())?;
    Ok(format!("{checked} centers over W in {{100, 300, 1024}}, scales 2/3/7"))
}

// ---------------------------------------------------------------------------
// Parse corpus.

fn parse_corpus() -> Check {
    use corpus::{Expect, Space};
    let items = corpus::items();
    let four = AnswerSpace::multiple_choice(corpus::VCR_CHOICES);
    let detector = UnsureDetector::default();
    let mut failures = Vec::new();
    let mut unsure_items = 0;
    for (n, item) in items.iter().enumerate() {
        let space = match item.space {
            Space::Vcr => Some(&four),
            Space::Snli => Some(&AnswerSpace::EntailmentLabels),
            Space::None => None,
        };
        let ok = match (&item.expect, space) {
            (Expect::Questions(qs), _) => {
                parse_subquestions(item.text, 5).is_ok_and(|p| p.questions == qs.iter().map(|s| s.to_string()).collect::<Vec<_>>())
            }
            (Expect::NoQuestions, _) => parse_subquestions(item.text, 5) == Err(ParseError::NoQuestionsFound),
            (expect, Some(space)) => {
                let p = parse_reasoner(item.text, space, &detector);
                let kind_ok = match expect {
                    Expect::Confident(i) => p.verdict.kind == VerdictKind::Confident { answer: *i },
                    _ => p.verdict.is_unsure(),
                };
                if detect_unsure(item.text) {
                    unsure_items += 1;
                    if !p.verdict.is_unsure() {
                        failures.push(format!("#{n}: unsure phrase present but verdict {:?}", p.verdict.kind));
                    }
                }
                kind_ok && item.analysis.is_none_or(|a| p.analysis == a) && p.verdict.raw_text == item.text
            }
            (_, None) => false,
        };
        if !ok {
            failures.push(format!("#{n}: {:?}", item.text));
        }
    }
    ensure(items.len() == 60, || format!("corpus has {} items", items.len()))?;
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!("60/60 parsed as annotated, {unsure_items} unsure-phrase items read as Unsure"))
}

// ---------------------------------------------------------------------------
// Eval fixtures.

fn one_round(task: &TaskInstance, answer: usize) -> Transcript {
    let mut t = Transcript::new(task.id.clone(), "a scene", 4, "fixture");
    t.append_iteration(IterationRecord {
        index: 1,
        sub_qas: vec![QaPair {
            sub_question: "What is shown?".into(),
            sub_answer: "a scene".into(),
            iteration: 1,
        }],
        reasoner_analysis: "fixture".into(),
        verdict: Verdict::confident(answer, format!("Answer: {}", answer + 1)),
    })
    .expect("valid fixture");
    t
}

fn snli_task(id: String, gold: usize) -> TaskInstance {
    TaskInstance {
        id,
        image_ref: "img.jpg".into(),
        task_kind: TaskKind::SnliVe,
        main_text: "A hypothesis.".into(),
        answer_space: AnswerSpace::EntailmentLabels,
        gold: Some(gold),
        region_tags: Vec::new(),
    }
}

fn eval_aggregation() -> Check {
    // (label index, class size, per-class accuracy in points)
    let classes = [(2usize, 1664usize, 83.4f64), (1, 1672, 25.9), (0, 1664, 56.7)];
    let mut tasks = Vec::new();
    let mut transcripts = Vec::new();
    let mut expected_correct = 0;
    for (label, count, points) in classes {
        let correct = (count as f64 * points / 100.0).round() as usize;
        expected_correct += correct;
        for i in 0..count {
            let task = snli_task(format!("{label}-{i}"), label);
            let answer = if i < correct { label } else { (label + 1) % 3 };
            transcripts.push(one_round(&task, answer));
            tasks.push(task);
        }
    }
    let report = score(&transcripts, &tasks).map_err(|e| e.to_string())?;
    let overall = report.accuracy_points().ok_or("no accuracy")?;
    let weighted: f64 = report.per_class.values().map(|c| c.accuracy * c.count as f64).sum::<f64>() / report.n_scored as f64;
    for (name, points) in [("contradiction", 83.4), ("neutral", 25.9), ("entailment", 56.7)] {
        let got = report.per_class.get(name).ok_or(format!("no class {name}"))?.accuracy * 100.0;
        ensure((got - points).abs() < AGGREGATE_TOLERANCE_POINTS, || format!("{name}: {got:.3}"))?;
    }
    ensure(report.correct == expected_correct, || format!("correct {}", report.correct))?;
    ensure((weighted * 100.0 - overall).abs() < 1e-9, || "overall is not the weighted class mean".into())?;
    ensure((overall - 55.3).abs() <= AGGREGATE_TOLERANCE_POINTS, || format!("overall {overall:.3}"))?;
    Ok(format!("C/N/E over 1664/1672/1664 -> overall {overall:.2} (target 55.3 +/- {AGGREGATE_TOLERANCE_POINTS})"))
}

fn random_guess() -> Check {
    let mut rng = DetRng::from_seed(2024);
    let mcq = AnswerSpace::multiple_choice(corpus::VCR_CHOICES);
    let mut run = |space: &AnswerSpace, kind: TaskKind| -> Result<f64, String> {
        let mut tasks = Vec::new();
        let mut transcripts = Vec::new();
        for i in 0..RANDOM_TASKS {
            let task = TaskInstance {
                id: format!("r{i}"),
                image_ref: "img.jpg".into(),
                task_kind: kind,
                main_text: "q".into(),
                answer_space: space.clone(),
                gold: Some(rng.index(space.len())),
                region_tags: Vec::new(),
            };
            transcripts.push(one_round(&task, rng.index(space.len())));
            tasks.push(task);
        }
        score(&transcripts, &tasks)
            .map_err(|e| e.to_string())?
            .accuracy_points()
            .ok_or_else(|| "no accuracy".into())
    };
    let four = run(&mcq, TaskKind::VcrQa)?;
    let three = run(&AnswerSpace::EntailmentLabels, TaskKind::SnliVe)?;
    ensure((four - 25.0).abs() <= RANDOM_TOLERANCE_POINTS, || format!("4-choice {four:.2}"))?;
    ensure((three - 33.3).abs() <= RANDOM_TOLERANCE_POINTS, || format!("3-label {three:.2}"))?;
    Ok(format!("4-choice {four:.2}, 3-label {three:.2} over {RANDOM_TASKS} tasks each"))
}

// ---------------------------------------------------------------------------
// Adversarial backends.

#[derive(Clone, Copy, Debug)]
enum Adversary {
    Empty,
    Gibberish,
    AlwaysUnsure,
    DuplicateQuestions,
}

const GIBBERISH: &[&str] = &[
    "1.", "-", "?", "\n", "answer", "is", "(b)", "option", "not", "sure", "Sub-question", "3:", "zzkq", "**", "\"",
    "what", "Is", "the", "entailment", "7", "a)", "\u{2022}", "Answer:", "q2:", "...", "\t",
];

fn gibberish(seed: &[u8]) -> String {
    let mut rng = DetRng::from_parts(&[b"gibberish", seed]);
    let n = rng.index(24);
    (0..n).map(|_| *rng.pick(GIBBERISH)).collect::<Vec<_>>().join(" ")
}

fn adversary_backends(kind: Adversary) -> Backends {
    let chat = FnChat::new("adversary-chat", move |role, req| {
        Ok(match kind {
            Adversary::Empty => String::new(),
            Adversary::Gibberish => gibberish(format!("{role:?}{}", req.prompt()).as_bytes()),
            Adversary::AlwaysUnsure => match role {
                Role::Questioner => "1. What is there?\n2. Where is it?".to_string(),
                _ => "We are not sure.".to_string(),
            },
            Adversary::DuplicateQuestions => match role {
                Role::Questioner => "1. What is there?\n2. What is there?\n3. what is there?".to_string(),
                _ => "I am not sure at all.".to_string(),
            },
        })
    });
    let vision = FnVision::new(
        "adversary-vqa",
        move |req| {
            Ok(match kind {
                Adversary::Empty => String::new(),
                Adversary::Gibberish => gibberish(req.question.as_bytes()),
                _ => "not sure".to_string(),
            })
        },
        move |image, _| {
            Ok(match kind {
                Adversary::Empty => String::new(),
                Adversary::Gibberish => gibberish(image.as_bytes()),
                _ => "an image".to_string(),
            })
        },
    );
    Backends::paired(Arc::new(chat), Arc::new(vision))
}

fn fuzz_task(rng: &mut DetRng, n: usize) -> TaskInstance {
    if rng.chance(0.5) {
        TaskInstance {
            id: format!("f{n}"),
            image_ref: format!("img-{n}.jpg"),
            task_kind: TaskKind::VcrQa,
            main_text: "Why is [person1] smiling?".into(),
            answer_space: AnswerSpace::multiple_choice(corpus::VCR_CHOICES),
            gold: Some(rng.index(4)),
            region_tags: vec![PersonRegion::new(1, [10.0, 0.0, 50.0, 80.0], 300.0)],
        }
    } else {
        snli_task(format!("f{n}"), rng.index(3))
    }
}

fn check_run(tr: &Transcript, backends: &Backends, config: &RunConfig) -> Result<(), String> {
    tr.validate().map_err(|e| format!("invalid transcript: {e}"))?;
    let t = tr.iteration_count();
    ensure(t <= config.max_iterations as usize, || format!("{t} iterations"))?;
    let counters = backends.counters();
    let total = counters.total();
    ensure(total <= call_budget(config), || format!("{total} calls > budget {}", call_budget(config)))?;
    ensure(total == tr.calls.len() as u64, || "call log disagrees with counters".into())?;
    if tr.is_aborted() {
        return Ok(());
    }
    let sub_answers: usize = tr.iterations.iter().map(|r| r.sub_qas.len()).sum();
    let forced = tr.final_verdict.as_ref().is_some_and(|v| v.is_forced());
    let q = counters.get(Role::Questioner) as usize;
    ensure(counters.get(Role::Captioner) == 1, || "caption not fetched exactly once".into())?;
    ensure(counters.get(Role::Answerer) as usize == sub_answers, || "answer calls != sub-QA pairs".into())?;
    ensure(counters.get(Role::Reasoner) as usize == t, || "reasoner calls != iterations".into())?;
    ensure((t..=2 * t).contains(&q), || format!("{q} questioner calls for {t} iterations"))?;
    ensure(counters.get(Role::Finalizer) == forced as u64, || "finalizer call mismatch".into())?;
    ensure(total as usize <= 1 + sub_answers + 3 * t + 1, || "exceeds per-transcript bound".into())?;
    for rec in &tr.iterations {
        ensure(rec.sub_qas.iter().all(|qa| !qa.sub_question.is_empty() && !qa.sub_answer.is_empty()), || {
            "empty sub-QA text".into()
        })?;
    }
    Ok(())
}

fn adversarial_fuzz() -> Check {
    let kinds = [Adversary::Empty, Adversary::Gibberish, Adversary::AlwaysUnsure, Adversary::DuplicateQuestions];
    let mut rng = DetRng::from_seed(8);
    let mut runs = 0;
    let mut aborted = 0;
    let mut forced = 0;
    for n in 0..200 {
        let kind = kinds[n % kinds.len()];
        let config = RunConfig {
            max_iterations: 1 + rng.index(6) as u32,
            max_subquestions: 1 + rng.index(5),
            concurrency_limit: 1,
            parallel_subanswers: rng.chance(0.5),
            ..RunConfig::default()
        };
        let task = fuzz_task(&mut rng, n);
        let engine = Engine::new(adversary_backends(kind), config.clone(), PromptSet::builtin());
        let tr = engine.run_task(&task);
        check_run(&tr, engine.backends(), &config).map_err(|e| format!("{kind:?} run {n}: {e}"))?;
        let round_trip = Transcript::from_json_line(&tr.to_json_line().map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(round_trip == tr, || format!("{kind:?} run {n}: transcript does not round-trip"))?;
        runs += 1;
        aborted += tr.is_aborted() as usize;
        forced += tr.final_verdict.as_ref().is_some_and(|v| v.is_forced()) as usize;
    }
    Ok(format!("{runs} runs halted within bound ({aborted} aborted, {forced} forced)"))
}

// ---------------------------------------------------------------------------
// Live smoke.

const SMOKE_CONFIG_ENV: &str = "IDEALGPT_SMOKE_CONFIG";
const SMOKE_MANIFEST_ENV: &str = "IDEALGPT_SMOKE_MANIFEST";

fn live_smoke() -> Outcome {
    let (Ok(config_path), Ok(manifest_path)) = (std::env::var(SMOKE_CONFIG_ENV), std::env::var(SMOKE_MANIFEST_ENV))
    else {
        return Outcome::Skip(format!("set {SMOKE_CONFIG_ENV} and {SMOKE_MANIFEST_ENV} to run"));
    };
    let run = || -> Check {
        use idealgpt_core::backend::ResolveOptions;
        use idealgpt_core::dataset::{load, DatasetManifest};
        let config = RunConfig::load(Path::new(&config_path)).map_err(|e| e.to_string())?;
        let manifest = DatasetManifest::load(Path::new(&manifest_path)).map_err(|e| e.to_string())?;
        let loaded = load(&manifest, false).map_err(|e| e.to_string())?;
        let tasks: Vec<TaskInstance> = loaded.tasks.into_iter().take(10).collect();
        ensure(tasks.len() == 10, || format!("manifest has {} usable records", tasks.len()))?;
        let (profile, base_dir) = config.load_profile().map_err(|e| e.to_string())?;
        let opts = ResolveOptions {
            base_dir,
            images_root: manifest.images_dir(),
            record: None,
        };
        let backends = profile.resolve(&opts).map_err(|e: BackendError| e.to_string())?;
        let prompts = config.prompts().map_err(|e| e.to_string())?;
        let batch = Engine::new(backends, config, prompts).run_batch(&tasks, None).map_err(|e| e.to_string())?;
        for tr in &batch.transcripts {
            ensure(!tr.is_aborted(), || format!("{} aborted: {:?}", tr.task_id, tr.aborted))?;
            ensure(tr.iteration_count() >= 1, || format!("{} has no iterations", tr.task_id))?;
            tr.validate().map_err(|e| e.to_string())?;
        }
        Ok(format!("{} well-formed transcripts", batch.transcripts.len()))
    };
    match run() {
        Ok(m) => Outcome::Pass(m),
        Err(e) => Outcome::Fail(e),
    }
}

type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

fn main() {
    let checks: Vec<Criterion> = vec![
        ("oracle convergence", Box::new(|| to_outcome(oracle_convergence()))),
        ("iteration-bound ablation", Box::new(|| to_outcome(iteration_ablation()))),
        ("replay determinism", Box::new(|| to_outcome(replay_determinism()))),
        ("binning correctness", Box::new(|| to_outcome(binning()))),
        ("parsing corpus", Box::new(|| to_outcome(parse_corpus()))),
        ("eval aggregation", Box::new(|| to_outcome(eval_aggregation()))),
        ("random-guess sanity", Box::new(|| to_outcome(random_guess()))),
        ("termination and call budget", Box::new(|| to_outcome(adversarial_fuzz()))),
        ("live smoke", Box::new(live_smoke)),
    ];
    let mut failed = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        let line = match check() {
            Outcome::Pass(m) => format!("PASS  {}. {name}: {m}", n + 1),
            Outcome::Skip(m) => format!("SKIP  {}. {name}: {m}", n + 1),
            Outcome::Fail(m) => {
                failed += 1;
                format!("FAIL  {}. {name}: {m}", n + 1)
            }
        };
        println!("{line}");
    }
    println!("acceptance: {} criteria, {failed} failed", checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn to_outcome(c: Check) -> Outcome {
    match c {
        Ok(m) => Outcome::Pass(m),
        Err(e) => Outcome::Fail(e),
    }
}
