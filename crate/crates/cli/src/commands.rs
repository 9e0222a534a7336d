use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use idealgpt_core::backend::{BackendBinding, BackendProfile, Cassette, ResolveOptions};
use idealgpt_core::config::load_profile_file;
use idealgpt_core::dataset::{self, DatasetManifest};
use idealgpt_core::engine::{BatchResult, Engine, RunSummary};
use idealgpt_core::eval::{compare_ablation, score};
use idealgpt_core::sim::{generate_world, WorldParams};
use idealgpt_core::{RunConfig, TaskInstance};

use crate::matrix::Matrix;
use crate::output::{read_transcripts, render_transcript, TRANSCRIPTS_FILE};
use crate::{AblateArgs, EvalArgs, GenWorldArgs, InspectArgs, ReplayArgs, RunArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Partial = 2,
}

const SUMMARY_FILE: &str = "summary.json";

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path)?;
    m.check_paths()?;
    Ok(m)
}

/// Loads the records and applies the config's sample settings.
fn load_tasks(manifest: &DatasetManifest, config: &RunConfig, strict: bool) -> Result<Vec<TaskInstance>> {
    let loaded = dataset::load(manifest, strict)?;
    if !loaded.skipped.is_empty() {
        log::warn!("skipped {} malformed records", loaded.skipped.len());
    }
    let tasks = match config.sample_size {
        Some(n) => dataset::sample(&loaded.tasks, n, config.sample_seed)?,
        None => loaded.tasks,
    };
    if tasks.is_empty() {
        bail!("{} holds no usable records", manifest.records_file().display());
    }
    Ok(tasks)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Runs the batch, streaming transcripts to `transcripts_path`.
fn execute(engine: &Engine, tasks: &[TaskInstance], transcripts_path: &Path) -> Result<BatchResult> {
    if let Some(dir) = transcripts_path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(transcripts_path).with_context(|| format!("creating {}", transcripts_path.display()))?;
    let mut sink = BufWriter::new(file);
    let batch = engine.run_batch(tasks, Some(&mut sink))?;
    sink.flush()?;
    Ok(batch)
}

fn status_of(batch: &BatchResult) -> Status {
    let aborted = batch.transcripts.iter().filter(|t| t.is_aborted()).count();
    if aborted > 0 {
        log::warn!("{aborted} of {} tasks aborted", batch.transcripts.len());
        Status::Partial
    } else {
        Status::Ok
    }
}

fn run_into(out: &Path, engine: &Engine, tasks: &[TaskInstance]) -> Result<Status> {
    let transcripts = out.join(TRANSCRIPTS_FILE);
    let batch = execute(engine, tasks, &transcripts)?;
    let summary = RunSummary::new(&batch, &engine.backends().fingerprint());
    let summary_path = out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;
    println!("transcripts: {}", transcripts.display());
    println!("summary: {}", summary_path.display());
    Ok(status_of(&batch))
}

pub fn run(a: RunArgs) -> Result<Status> {
    let config = RunConfig::load(&a.config)?;
    let (profile, profile_dir) = match &a.profile {
        Some(p) => (load_profile_file(p)?, p.parent().map(Path::to_path_buf)),
        None => config.load_profile()?,
    };
    let manifest = load_manifest(&a.manifest)?;
    let tasks = load_tasks(&manifest, &config, a.strict)?;
    let prompts = config.prompts()?;
    let record = match &a.record {
        Some(p) => Some(Arc::new(Cassette::create(p)?)),
        None => None,
    };
    let opts = ResolveOptions {
        base_dir: profile_dir,
        images_root: manifest.images_dir(),
        record,
    };
    let backends = profile.resolve(&opts)?;
    let engine = Engine::new(backends, config, prompts);
    let status = run_into(&a.out, &engine, &tasks)?;
    if let Some(p) = &a.record {
        println!("cassette: {}", p.display());
    }
    Ok(status)
}

pub fn eval(a: EvalArgs) -> Result<Status> {
    let transcripts = read_transcripts(&a.transcripts)?;
    let manifest = load_manifest(&a.manifest)?;
    let tasks = dataset::load(&manifest, false)?.tasks;
    let report = score(&transcripts, &tasks)?;
    print!("{}", report.table());
    let report_path = a.report.unwrap_or_else(|| {
        let dir = if a.transcripts.is_dir() {
            a.transcripts.clone()
        } else {
            a.transcripts.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        dir.join("report.json")
    });
    write_json(&report_path, &report)?;
    println!("report: {}", report_path.display());
    Ok(Status::Ok)
}

/// Per-role model ids from a backend fingerprint.
fn fingerprint_models(fingerprint: &str) -> Result<[String; 4]> {
    let mut models: [Option<String>; 4] = Default::default();
    for part in fingerprint.split(';') {
        let (role, model) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("malformed backend fingerprint {fingerprint:?}"))?;
        let slot = match role {
            "questioner" => 0,
            "reasoner" => 1,
            "answerer" => 2,
            "captioner" => 3,
            other => bail!("unknown role {other:?} in backend fingerprint"),
        };
        models[slot] = Some(model.to_string());
    }
    let [Some(q), Some(r), Some(an), Some(c)] = models else {
        bail!("backend fingerprint {fingerprint:?} does not name all four roles");
    };
    Ok([q, r, an, c])
}

pub fn replay(a: ReplayArgs) -> Result<Status> {
    let text = std::fs::read_to_string(&a.summary).with_context(|| format!("reading {}", a.summary.display()))?;
    let summary: RunSummary = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.summary.display()))?;
    let config = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = summary.config.clone();
            c.base_dir = a.summary.parent().map(Path::to_path_buf);
            c.validate()?;
            c
        }
    };
    let cassette = std::fs::canonicalize(&a.cassette).with_context(|| format!("cassette {}", a.cassette.display()))?;
    let [q, r, an, c] = fingerprint_models(&summary.backend_fingerprint)?;
    let bind = |model_id: String| BackendBinding::Replay {
        cassette: cassette.clone(),
        model_id,
    };
    let profile = BackendProfile {
        questioner: bind(q),
        reasoner: bind(r),
        answerer: bind(an),
        captioner: bind(c),
    };
    let manifest = load_manifest(&a.manifest)?;
    let tasks = load_tasks(&manifest, &config, false)?;
    let prompts = config.prompts()?;
    let backends = profile.resolve(&ResolveOptions::default())?;
    let engine = Engine::new(backends, config, prompts);
    run_into(&a.out, &engine, &tasks)
}

pub fn inspect(a: InspectArgs) -> Result<Status> {
    let transcripts = read_transcripts(&a.transcripts)?;
    let t = transcripts
        .iter()
        .find(|t| t.task_id == a.task_id)
        .ok_or_else(|| anyhow!("task {:?} not found in {}", a.task_id, a.transcripts.display()))?;
    print!("{}", render_transcript(t));
    Ok(Status::Ok)
}

pub fn ablate(a: AblateArgs) -> Result<Status> {
    let matrix = Matrix::load(&a.matrix)?;
    let base = RunConfig::load(&matrix.resolve(&matrix.base_config))?;
    let (profile, profile_dir) = base.load_profile()?;
    let manifest_path = match (&a.manifest, &matrix.manifest) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => matrix.resolve(p),
        (None, None) => bail!("no dataset manifest: pass --manifest or set `manifest` in the matrix"),
    };
    let manifest = load_manifest(&manifest_path)?;
    let tasks = load_tasks(&manifest, &base, false)?;
    let prompts = base.prompts()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let cassette_path: PathBuf = a.cassette.clone().unwrap_or_else(|| a.out.join("shared.cassette.jsonl"));
    let cassette = Arc::new(Cassette::shared(&cassette_path)?);

    let mut status = Status::Ok;
    let mut reports = Vec::new();
    for entry in &matrix.configs {
        let (config, profile) = entry.apply(&base, &profile);
        config.validate()?;
        let opts = ResolveOptions {
            base_dir: profile_dir.clone(),
            images_root: manifest.images_dir(),
            record: Some(cassette.clone()),
        };
        let backends = profile.resolve(&opts).with_context(|| format!("configuration {:?}", entry.label))?;
        let engine = Engine::new(backends, config, prompts.clone());
        let path = a.out.join(format!("{}.{TRANSCRIPTS_FILE}", entry.label));
        log::info!("configuration {}", entry.label);
        let batch = execute(&engine, &tasks, &path)?;
        if status_of(&batch) == Status::Partial {
            status = Status::Partial;
        }
        reports.push((entry.label.clone(), score(&batch.transcripts, &tasks)?));
    }
    let table = compare_ablation(&reports, matrix.baseline())?;
    print!("{}", table.render());
    let table_path = a.out.join("ablation.json");
    write_json(&table_path, &table)?;
    println!("ablation: {}", table_path.display());
    println!("cassette: {}", cassette_path.display());
    Ok(status)
}

pub fn gen_world(a: GenWorldArgs) -> Result<Status> {
    let params = WorldParams {
        seed: a.seed,
        n_tasks: a.tasks,
        facts_per_task: a.facts,
        required_fraction: a.required_fraction,
    };
    let world = generate_world(&params)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let write = |name: &str, text: String| -> Result<PathBuf> {
        let p = a.out.join(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    };
    let world_path = write("world.json", world.to_json())?;
    let records = write("tasks.jsonl", world.to_records_jsonl())?;
    let mut manifest = DatasetManifest::new(idealgpt_core::TaskKind::VcrQa, "tasks.jsonl");
    manifest.declared_size = Some(world.scenes.len());
    let manifest_path = write("manifest.toml", toml::to_string(&manifest)?)?;
    let binding = BackendBinding::Oracle {
        world: Some("world.json".into()),
        generate: None,
        noise_rate: a.noise,
        questions_per_round: a.questions_per_round,
    };
    let profile = BackendProfile {
        questioner: binding.clone(),
        reasoner: binding.clone(),
        answerer: binding.clone(),
        captioner: binding,
    };
    profile.validate()?;
    let profile_path = write("profile.toml", toml::to_string(&profile)?)?;
    let config_path = write(
        "run.toml",
        format!(
            "backend_profile = \"profile.toml\"\nmax_iterations = 4\nmax_subquestions = {}\nrecord_timings = false\n",
            a.questions_per_round
        ),
    )?;
    for p in [world_path, records, manifest_path, profile_path, config_path] {
        println!("wrote {}", p.display());
    }
    Ok(Status::Ok)
}
