//! Record/replay of backend responses.
//!
//! A cassette file holds one JSON record per line:
//! `{"fingerprint": "...", "role": "reasoner", "response": "...", "reusable": false}`.
//! Replay pops entries per fingerprint in recorded order; a reusable entry is
//! served any number of times.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{caption_fingerprint, BackendError, ChatBackend, ChatRequest, VisionBackend, VqaRequest};
use crate::types::Role;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub role: Role,
    pub response: String,
    #[serde(default)]
    pub reusable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CassetteMode {
    Record,
    Replay,
}

#[derive(Default)]
struct Tape {
    by_fingerprint: HashMap<String, VecDeque<CassetteEntry>>,
    recorded: Vec<CassetteEntry>,
}

pub struct Cassette {
    mode: CassetteMode,
    tape: Mutex<Tape>,
    sink: Option<Mutex<File>>,
    /// Record mode: serve a matching prior entry instead of calling through.
    reuse_existing: bool,
}

impl Cassette {
    /// A replay cassette over the given entries.
    pub fn replay(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        let mut tape = Tape::default();
        for e in entries {
            tape.by_fingerprint
                .entry(e.fingerprint.clone())
                .or_default()
                .push_back(e);
        }
        Cassette {
            mode: CassetteMode::Replay,
            tape: Mutex::new(tape),
            sink: None,
            reuse_existing: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::replay(read_entries(path)?))
    }

    /// Every entry may be served any number of times.
    pub fn all_reusable(self) -> Self {
        {
            let mut tape = self.tape.lock().unwrap_or_else(|e| e.into_inner());
            for q in tape.by_fingerprint.values_mut() {
                for e in q.iter_mut() {
                    e.reusable = true;
                }
            }
        }
        self
    }

    /// An in-memory recorder; read the result with [`Cassette::recorded`].
    pub fn recorder() -> Self {
        Cassette {
            mode: CassetteMode::Record,
            tape: Mutex::new(Tape::default()),
            sink: None,
            reuse_existing: false,
        }
    }

    /// Records to `path`, truncating it.
    pub fn create(path: &Path) -> Result<Self, BackendError> {
        ensure_parent(path)?;
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(Cassette {
            sink: Some(Mutex::new(file)),
            ..Self::recorder()
        })
    }

    /// Record mode over an existing file: prior entries are served as
    /// reusable, misses call through and are appended.
    pub fn shared(path: &Path) -> Result<Self, BackendError> {
        let existing = if path.exists() {
            read_entries(path)?
        } else {
            Vec::new()
        };
        ensure_parent(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        let mut c = Self::replay(existing).all_reusable();
        c.mode = CassetteMode::Record;
        c.sink = Some(Mutex::new(file));
        c.reuse_existing = true;
        Ok(c)
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn lookup(&self, role: Role, fingerprint: &str) -> Result<String, BackendError> {
        let mut tape = self.tape.lock().unwrap_or_else(|e| e.into_inner());
        let miss = || BackendError::CassetteMiss {
            role,
            fingerprint: fingerprint.to_string(),
        };
        let queue = tape.by_fingerprint.get_mut(fingerprint).ok_or_else(miss)?;
        let front = queue.front().ok_or_else(miss)?;
        if front.reusable {
            return Ok(front.response.clone());
        }
        Ok(queue.pop_front().map(|e| e.response).unwrap_or_default())
    }

    pub fn record(&self, entry: CassetteEntry) -> Result<(), BackendError> {
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&entry)
                .map_err(|e| BackendError::Config(e.to_string()))?;
            let mut f = sink.lock().unwrap_or_else(|e| e.into_inner());
            writeln!(f, "{line}").map_err(|e| BackendError::Config(format!("cassette write: {e}")))?;
        }
        let mut tape = self.tape.lock().unwrap_or_else(|e| e.into_inner());
        if self.reuse_existing {
            let mut reusable = entry.clone();
            reusable.reusable = true;
            tape.by_fingerprint
                .entry(entry.fingerprint.clone())
                .or_default()
                .push_back(reusable);
        }
        tape.recorded.push(entry);
        Ok(())
    }

    /// Entries recorded so far, in call-completion order.
    pub fn recorded(&self) -> Vec<CassetteEntry> {
        self.tape
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .recorded
            .clone()
    }

    fn through(
        &self,
        role: Role,
        fingerprint: String,
        call: impl FnOnce() -> Result<String, BackendError>,
    ) -> Result<String, BackendError> {
        if self.reuse_existing {
            if let Ok(hit) = self.lookup(role, &fingerprint) {
                return Ok(hit);
            }
        }
        let response = call()?;
        self.record(CassetteEntry {
            fingerprint,
            role,
            response: response.clone(),
            reusable: false,
        })?;
        Ok(response)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> BackendError {
    BackendError::Config(format!("cassette {}: {e}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<(), BackendError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| io_err(path, e)),
        _ => Ok(()),
    }
}

fn read_entries(path: &Path) -> Result<Vec<CassetteEntry>, BackendError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
            BackendError::Config(format!("cassette {} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Wraps a chat backend and records every response.
pub struct RecordingChat {
    inner: Arc<dyn ChatBackend>,
    cassette: Arc<Cassette>,
}

impl RecordingChat {
    pub fn new(inner: Arc<dyn ChatBackend>, cassette: Arc<Cassette>) -> Self {
        RecordingChat { inner, cassette }
    }
}

impl ChatBackend for RecordingChat {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, role: Role, req: &ChatRequest) -> Result<String, BackendError> {
        self.cassette
            .through(role, req.fingerprint(role), || self.inner.complete(role, req))
    }
}

pub struct RecordingVision {
    inner: Arc<dyn VisionBackend>,
    cassette: Arc<Cassette>,
}

impl RecordingVision {
    pub fn new(inner: Arc<dyn VisionBackend>, cassette: Arc<Cassette>) -> Self {
        RecordingVision { inner, cassette }
    }
}

impl VisionBackend for RecordingVision {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn answer(&self, req: &VqaRequest) -> Result<String, BackendError> {
        let fp = req.fingerprint(Role::Answerer, self.inner.model_id());
        self.cassette.through(Role::Answerer, fp, || self.inner.answer(req))
    }

    fn caption(&self, image_ref: &str, prompt: &str) -> Result<String, BackendError> {
        let fp = caption_fingerprint(self.inner.model_id(), image_ref, prompt);
        self.cassette
            .through(Role::Captioner, fp, || self.inner.caption(image_ref, prompt))
    }
}

/// Serves chat responses from a cassette. The model id must match the one
/// used when recording, since it is part of the request fingerprint.
pub struct ReplayChat {
    model_id: String,
    cassette: Arc<Cassette>,
}

impl ReplayChat {
    pub fn new(model_id: impl Into<String>, cassette: Arc<Cassette>) -> Self {
        ReplayChat {
            model_id: model_id.into(),
            cassette,
        }
    }
}

impl ChatBackend for ReplayChat {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, role: Role, req: &ChatRequest) -> Result<String, BackendError> {
        self.cassette.lookup(role, &req.fingerprint(role))
    }
}

pub struct ReplayVision {
    model_id: String,
    cassette: Arc<Cassette>,
}

impl ReplayVision {
    pub fn new(model_id: impl Into<String>, cassette: Arc<Cassette>) -> Self {
        ReplayVision {
            model_id: model_id.into(),
            cassette,
        }
    }
}

impl VisionBackend for ReplayVision {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn answer(&self, req: &VqaRequest) -> Result<String, BackendError> {
        self.cassette
            .lookup(Role::Answerer, &req.fingerprint(Role::Answerer, &self.model_id))
    }

    fn caption(&self, image_ref: &str, prompt: &str) -> Result<String, BackendError> {
        self.cassette.lookup(
            Role::Captioner,
            &caption_fingerprint(&self.model_id, image_ref, prompt),
        )
    }
}
