//! `idealgpt`: run, score, replay, inspect and ablate reasoning-loop batches.
//!
//! Exit codes: 0 success, 1 fatal configuration or credential error,
//! 2 some tasks aborted.

mod commands;
mod matrix;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "idealgpt", version, about = "Iterative question decomposition over images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a batch and write transcripts.jsonl and summary.json.
    Run(RunArgs),
    /// Score transcripts against dataset gold labels.
    Eval(EvalArgs),
    /// Re-run a recorded batch from its cassette without any live backend.
    Replay(ReplayArgs),
    /// Print one task's dialogue iteration by iteration.
    Inspect(InspectArgs),
    /// Run several configurations on one dataset and compare accuracies.
    Ablate(AblateArgs),
    /// Generate an oracle world with a matching dataset, profile and config.
    GenWorld(GenWorldArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dataset manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Backend profile overriding the one named in the config.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Record every backend response to this cassette file.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Fail on the first malformed dataset record instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// A transcripts file, or a directory holding `*transcripts.jsonl` files.
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Where to write the JSON report; defaults to report.json next to the transcripts.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// summary.json written by the recorded run.
    #[arg(long)]
    summary: PathBuf,
    /// Cassette written by `run --record`.
    #[arg(long)]
    cassette: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Configuration to use instead of the one stored in the summary.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// A transcripts file or run output directory.
    transcripts: PathBuf,
    task_id: String,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Matrix file listing the configurations to compare.
    #[arg(long)]
    matrix: PathBuf,
    /// Dataset manifest; overrides `manifest` in the matrix file.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Shared cassette; defaults to shared.cassette.jsonl in the output directory.
    #[arg(long)]
    cassette: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenWorldArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    tasks: usize,
    #[arg(long, default_value_t = 6)]
    facts: usize,
    #[arg(long, default_value_t = 1.0)]
    required_fraction: f64,
    /// Answer-flip probability written into the generated profile.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 3)]
    questions_per_round: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Eval(a) => commands::eval(a),
        Command::Replay(a) => commands::replay(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::GenWorld(a) => commands::gen_world(a),
    };
    match result {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
