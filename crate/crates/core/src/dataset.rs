//! Line-delimited task records and seeded subsampling.
//!
//! VCR records:
//!
//! ```json
//! {"id": "val-1", "image": "movie/1.jpg", "question": "Why is [person1] smiling?",
//!  "choices": ["...", "...", "...", "..."], "label": 2,
//!  "regions": [{"tag": 1, "bbox": [10, 20, 110, 300], "image_width": 640}]}
//! ```
//!
//! SNLI-VE records:
//!
//! ```json
//! {"id": "ve-1", "image": "flickr/1.jpg", "hypothesis": "Two people are outside.", "label": "entailment"}
//! ```
//!
//! Labels `E`, `N` and `C` are accepted as short forms. A manifest names the
//! record file:
//!
//! ```toml
//! kind = "vcr"
//! records_path = "val.jsonl"
//! images_root = "images"
//! declared_size = 26534
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::DetRng;
use crate::types::{AnswerSpace, EntailmentLabel, PersonRegion, TaskInstance, TaskKind};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("sample of {requested} requested from {available} instances")]
    SampleTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub kind: TaskKind,
    pub records_path: PathBuf,
    #[serde(default)]
    pub images_root: Option<PathBuf>,
    #[serde(default)]
    pub declared_size: Option<usize>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(kind: TaskKind, records_path: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            kind,
            records_path: records_path.into(),
            images_root: None,
            declared_size: None,
            base_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut m: DatasetManifest = toml::from_str(&text).map_err(|e| DatasetError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf);
        Ok(m)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn records_file(&self) -> PathBuf {
        self.resolve(&self.records_path)
    }

    pub fn images_dir(&self) -> Option<PathBuf> {
        self.images_root.as_ref().map(|p| self.resolve(p))
    }

    pub fn check_paths(&self) -> Result<(), DatasetError> {
        let records = self.records_file();
        if !records.is_file() {
            return Err(DatasetError::Io {
                path: records,
                message: "records file does not exist".into(),
            });
        }
        if let Some(dir) = self.images_dir() {
            if !dir.is_dir() {
                return Err(DatasetError::Io {
                    path: dir,
                    message: "images_root is not a directory".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub tag: u32,
    pub bbox: [f64; 4],
    pub image_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcrRecord {
    pub id: String,
    pub image: String,
    pub question: String,
    pub choices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<RegionRecord>,
}

impl VcrRecord {
    pub fn from_task(task: &TaskInstance) -> Self {
        VcrRecord {
            id: task.id.clone(),
            image: task.image_ref.clone(),
            question: task.main_text.clone(),
            choices: task.answer_space.labels().into_iter().map(str::to_string).collect(),
            label: task.gold,
            regions: task
                .region_tags
                .iter()
                .map(|r| RegionRecord {
                    tag: r.tag_id,
                    bbox: r.bbox,
                    image_width: r.image_width,
                })
                .collect(),
        }
    }

    fn into_task(self) -> TaskInstance {
        TaskInstance {
            id: self.id,
            image_ref: self.image,
            task_kind: TaskKind::VcrQa,
            main_text: self.question,
            answer_space: AnswerSpace::MultipleChoice { choices: self.choices },
            gold: self.label,
            region_tags: self
                .regions
                .into_iter()
                .map(|r| PersonRegion::new(r.tag, r.bbox, r.image_width))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnliVeRecord {
    pub id: String,
    pub image: String,
    pub hypothesis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl SnliVeRecord {
    fn into_task(self) -> Result<TaskInstance, String> {
        let gold = match &self.label {
            Some(l) => Some(
                EntailmentLabel::parse(l)
                    .ok_or_else(|| format!("unknown label {l:?}"))?
                    .index(),
            ),
            None => None,
        };
        Ok(TaskInstance {
            id: self.id,
            image_ref: self.image,
            task_kind: TaskKind::SnliVe,
            main_text: self.hypothesis,
            answer_space: AnswerSpace::EntailmentLabels,
            gold,
            region_tags: Vec::new(),
        })
    }
}

/// Parses one record line into a validated task.
pub fn parse_record(kind: TaskKind, line: &str) -> Result<TaskInstance, String> {
    let task = match kind {
        TaskKind::VcrQa => serde_json::from_str::<VcrRecord>(line)
            .map_err(|e| e.to_string())?
            .into_task(),
        TaskKind::SnliVe => serde_json::from_str::<SnliVeRecord>(line)
            .map_err(|e| e.to_string())?
            .into_task()?,
    };
    if task.image_ref.trim().is_empty() {
        return Err("image is empty".into());
    }
    task.validate().map_err(|e| e.to_string())?;
    Ok(task)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub tasks: Vec<TaskInstance>,
    pub skipped: Vec<Skipped>,
}

/// Streams tasks from a record file. Blank lines are ignored.
pub struct RecordReader<R> {
    kind: TaskKind,
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(kind: TaskKind, reader: R) -> Self {
        RecordReader {
            kind,
            lines: reader.lines(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<TaskInstance, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(DatasetError::MalformedRecord {
                        line: self.line_no,
                        reason: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_record(self.kind, &line).map_err(|reason| DatasetError::MalformedRecord {
                line: self.line_no,
                reason,
            }));
        }
    }
}

/// Loads every record. Malformed records are skipped with a warning, or
/// abort the load in strict mode.
pub fn load(manifest: &DatasetManifest, strict: bool) -> Result<Loaded, DatasetError> {
    manifest.check_paths()?;
    let path = manifest.records_file();
    let file = File::open(&path).map_err(|e| DatasetError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let mut out = Loaded::default();
    for item in RecordReader::new(manifest.kind, BufReader::new(file)) {
        match item {
            Ok(t) => out.tasks.push(t),
            Err(DatasetError::MalformedRecord { line, reason }) if !strict => {
                log::warn!("{}:{line}: skipping malformed record: {reason}", path.display());
                out.skipped.push(Skipped { line, reason });
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(declared) = manifest.declared_size {
        if declared != out.tasks.len() {
            log::warn!(
                "{}: declared_size {declared} but {} records loaded",
                path.display(),
                out.tasks.len()
            );
        }
    }
    Ok(out)
}

/// Uniform sample without replacement, in a seed-determined order.
///
/// A ChaCha8 stream keyed by the seed drives a partial Fisher-Yates shuffle
/// over the input order, so selections agree across platforms.
pub fn sample(instances: &[TaskInstance], n: usize, seed: u64) -> Result<Vec<TaskInstance>, DatasetError> {
    if n > instances.len() {
        return Err(DatasetError::SampleTooLarge {
            requested: n,
            available: instances.len(),
        });
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    DetRng::from_seed(seed).partial_shuffle(&mut order, n);
    Ok(order[..n].iter().map(|&i| instances[i].clone()).collect())
}
