use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use idealgpt_core::{Transcript, VerdictKind};

pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";

/// The transcript files at `path`: the file itself, or every
/// `*transcripts.jsonl` in a directory, sorted by name.
pub fn transcript_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        bail!("{} does not exist", path.display());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(TRANSCRIPTS_FILE)))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(
            "no *{TRANSCRIPTS_FILE} files in {}\n\
             hint: pass the output directory of `idealgpt run`, or a transcripts file directly",
            path.display()
        );
    }
    Ok(files)
}

pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>> {
    let mut out = Vec::new();
    for file in transcript_files(path)? {
        let reader = BufReader::new(File::open(&file).with_context(|| format!("opening {}", file.display()))?);
        for (n, line) in reader.lines().enumerate() {
            let line = line.with_context(|| format!("reading {}", file.display()))?;
            if line.trim().is_empty() {
                continue;
            }
            let t = Transcript::from_json_line(&line).with_context(|| format!("{}:{}", file.display(), n + 1))?;
            out.push(t);
        }
    }
    if out.is_empty() {
        bail!(
            "no transcripts found under {}\nhint: run `idealgpt run --out <dir>` first",
            path.display()
        );
    }
    Ok(out)
}

fn verdict_text(kind: &VerdictKind) -> String {
    match kind {
        VerdictKind::Confident { answer } => format!("confident, answer {}", answer + 1),
        VerdictKind::Unsure => "unsure".to_string(),
        VerdictKind::Forced { answer } => format!("forced at the iteration bound, answer {}", answer + 1),
    }
}

/// The transcript as readable text, iteration by iteration.
pub fn render_transcript(t: &Transcript) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Task {}", t.task_id);
    let _ = writeln!(out, "Backends: {}", t.backend_fingerprint);
    let _ = writeln!(out, "Caption: {}", t.caption);
    for rec in &t.iterations {
        let _ = writeln!(out, "\nIteration {}", rec.index);
        for (i, qa) in rec.sub_qas.iter().enumerate() {
            let _ = writeln!(out, "  Q{}: {}", i + 1, qa.sub_question);
            let _ = writeln!(out, "  A{}: {}", i + 1, qa.sub_answer);
        }
        let _ = writeln!(out, "  Analysis: {}", rec.reasoner_analysis);
        let _ = writeln!(out, "  Verdict: {}", verdict_text(&rec.verdict.kind));
    }
    out.push('\n');
    match &t.final_verdict {
        Some(v) => {
            let _ = writeln!(out, "Final: {}", verdict_text(&v.kind));
        }
        None => out.push_str("Final: none\n"),
    }
    if let Some(reason) = &t.aborted {
        let _ = writeln!(out, "Aborted: {reason}");
    }
    out
}
