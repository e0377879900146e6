//! Task CSV ingestion, label mapping and stratified 72/8/20 splitting.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{TaskId, TaskSpec};

/// Posts longer than this many characters are cut before prompting.
pub const MAX_POST_CHARS: usize = 6000;

/// Train / validation / test proportions.
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.72, 0.08, 0.20);

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: no rows with a mappable label ({dropped} dropped)")]
    EmptyDataset { path: PathBuf, dropped: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios((f64, f64, f64)),
    #[error("{task}: class {class} would receive no training examples ({count} in total)")]
    DegenerateClass {
        task: TaskId,
        class: usize,
        count: usize,
    },
    #[error("{task}: label {label} outside {range:?}")]
    InvalidLabel {
        task: TaskId,
        label: i64,
        range: std::ops::RangeInclusive<i64>,
    },
    #[error("{0}: empty text")]
    EmptyText(TaskId),
    #[error("record belongs to {found}, expected {expected}")]
    TaskMismatch { expected: TaskId, found: TaskId },
}

/// One post with its schema label (not the zero-based class index).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub task_id: TaskId,
    pub text: String,
    pub label: i64,
}

impl LabeledExample {
    pub fn new(task_id: TaskId, text: impl Into<String>, label: i64) -> Result<Self, CorpusError> {
        let text = text.into();
        let spec = task_id.spec();
        if !spec.is_valid_label(label) {
            return Err(CorpusError::InvalidLabel {
                task: task_id,
                label,
                range: spec.valid_labels(),
            });
        }
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText(task_id));
        }
        Ok(Self {
            task_id,
            text,
            label,
        })
    }

    /// Zero-based class index of the label.
    pub fn class(&self) -> usize {
        self.task_id
            .spec()
            .class_index(self.label)
            .expect("validated on construction")
    }
}

/// All examples of one task plus their per-class tally.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task: TaskId,
    examples: Vec<LabeledExample>,
    class_counts: Vec<usize>,
}

impl TaskDataset {
    pub fn new(task: TaskId, examples: Vec<LabeledExample>) -> Result<Self, CorpusError> {
        let spec = task.spec();
        let mut class_counts = vec![0; spec.num_classes()];
        for ex in &examples {
            if ex.task_id != task {
                return Err(CorpusError::TaskMismatch {
                    expected: task,
                    found: ex.task_id,
                });
            }
            class_counts[ex.class()] += 1;
        }
        Ok(Self {
            task,
            examples,
            class_counts,
        })
    }

    pub fn spec(&self) -> &'static TaskSpec {
        self.task.spec()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn into_examples(self) -> Vec<LabeledExample> {
        self.examples
    }
}

/// Raw label string to schema label. Lookup trims and ignores ASCII case.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(BTreeMap<String, i64>);

impl LabelMap {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, i64)>,
        S: AsRef<str>,
    {
        Self(
            entries
                .into_iter()
                .map(|(k, v)| (normalize_key(k.as_ref()), v))
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        let raw: BTreeMap<String, i64> =
            serde_json::from_reader(BufReader::new(file)).map_err(|source| CorpusError::Json {
                path: path.to_owned(),
                source,
            })?;
        Ok(Self::new(raw))
    }

    pub fn get(&self, raw: &str) -> Option<i64> {
        self.0.get(&normalize_key(raw)).copied()
    }

    /// Built-in mapping covering the common spellings of each public release.
    pub fn default_for(task: TaskId) -> Self {
        let severity = |minimal, mild, moderate, severe| {
            vec![
                ("minimal", minimal),
                ("minimum", minimal),
                ("mild", mild),
                ("moderate", moderate),
                ("severe", severe),
            ]
        };
        let entries: Vec<(&str, i64)> = match task {
            TaskId::T1 => vec![
                ("not stress", 0),
                ("not stressed", 0),
                ("stress", 1),
                ("stressed", 1),
            ],
            TaskId::T2 => severity(0, 1, 1, 1),
            TaskId::T3 => severity(0, 1, 2, 3),
            TaskId::T4 => vec![
                ("non-suicidal ideation", 0),
                ("no suicidal ideation", 0),
                ("suicidal ideation", 1),
            ],
            TaskId::T5 => vec![
                ("supportive", 0),
                ("indicator", 1),
                ("ideation", 1),
                ("behavior", 1),
                ("attempt", 1),
            ],
            TaskId::T6 => vec![
                ("supportive", 1),
                ("indicator", 2),
                ("ideation", 3),
                ("behavior", 4),
                ("attempt", 5),
            ],
        };
        let mut map = Self::new(entries);
        for label in task.spec().valid_labels() {
            map.0.insert(label.to_string(), label);
        }
        map
    }
}

fn normalize_key(raw: &str) -> String {
    raw.trim().to_ascii_lowercase()
}

/// Column names and label map used by [`load_task_csv`].
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub text_column: String,
    pub label_column: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            text_column: "text".into(),
            label_column: "label".into(),
        }
    }
}

/// A loaded dataset and the number of rows dropped for unmappable labels
/// or empty text.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: TaskDataset,
    pub dropped: usize,
}

/// Reads a task CSV (header row, RFC 4180 quoting), maps raw labels through
/// `label_map` and drops rows it cannot map.
pub fn load_task_csv(
    path: &Path,
    task: TaskId,
    label_map: &LabelMap,
    opts: &CsvOptions,
) -> Result<LoadReport, CorpusError> {
    let csv_err = |source| CorpusError::Csv {
        path: path.to_owned(),
        source,
    };
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn {
                path: path.to_owned(),
                column: name.to_string(),
            })
    };
    let text_idx = column(&opts.text_column)?;
    let label_idx = column(&opts.label_column)?;

    let spec = task.spec();
    let mut examples = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let text = record.get(text_idx).unwrap_or("");
        let label = record
            .get(label_idx)
            .and_then(|raw| label_map.get(raw))
            .filter(|l| spec.is_valid_label(*l));
        match label {
            Some(label) if !text.trim().is_empty() => examples.push(LabeledExample {
                task_id: task,
                text: text.to_string(),
                label,
            }),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} rows with unmappable labels or empty text",
            path.display()
        );
    }
    if examples.is_empty() {
        return Err(CorpusError::EmptyDataset {
            path: path.to_owned(),
            dropped,
        });
    }
    Ok(LoadReport {
        dataset: TaskDataset::new(task, examples)?,
        dropped,
    })
}

/// Cuts `text` to at most `limit` characters on a character boundary.
pub fn truncate_text(text: &str, limit: usize) -> &str {
    match text.char_indices().nth(limit) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

/// Train, validation and test partitions of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: TaskDataset,
    pub validation: TaskDataset,
    pub test: TaskDataset,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

/// Largest-remainder apportionment of `total` items over `ratios`.
///
/// Quotas within 1e-9 of an integer are snapped first so that 40 * 0.2 is
/// treated as exactly 8. Ties on the remainder go to the earlier part.
pub fn largest_remainder(total: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios
        .iter()
        .map(|r| {
            let q = total as f64 * r;
            if (q - q.round()).abs() < 1e-9 {
                q.round()
            } else {
                q
            }
        })
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-class stratified split. Within each class the examples are shuffled
/// with a generator seeded from `seed`, then cut by largest-remainder
/// counts. Each output split keeps the original example order.
pub fn stratified_split(
    ds: &TaskDataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitBundle, CorpusError> {
    let parts = [ratios.0, ratios.1, ratios.2];
    if parts.iter().any(|r| r.is_nan() || *r < 0.0)
        || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(CorpusError::InvalidRatios(ratios));
    }

    let classes = ds.spec().num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, ex) in ds.examples().iter().enumerate() {
        by_class[ex.class()].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0u8; ds.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        let counts = largest_remainder(members.len(), &parts);
        if counts[0] == 0 {
            return Err(CorpusError::DegenerateClass {
                task: ds.task,
                class,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let mut cursor = members.iter();
        for (part, &n) in counts.iter().enumerate() {
            for &idx in cursor.by_ref().take(n) {
                assignment[idx] = part as u8;
            }
        }
    }

    let pick = |part: u8| {
        let examples = ds
            .examples()
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == part)
            .map(|(ex, _)| ex.clone())
            .collect();
        TaskDataset::new(ds.task, examples)
    };
    Ok(SplitBundle {
        train: pick(0)?,
        validation: pick(1)?,
        test: pick(2)?,
        ratios,
        seed,
    })
}

/// File names of the persisted partitions, in train/val/test order.
pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "val.jsonl", "test.jsonl"];

pub fn write_jsonl(path: &Path, examples: &[LabeledExample]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for ex in examples {
        serde_json::to_writer(&mut out, ex).map_err(|source| CorpusError::Json {
            path: path.to_owned(),
            source,
        })?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_jsonl(path: &Path, task: TaskId) -> Result<TaskDataset, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut examples = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: LabeledExample =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                path: path.to_owned(),
                source,
            })?;
        examples.push(LabeledExample::new(ex.task_id, ex.text, ex.label)?);
    }
    TaskDataset::new(task, examples)
}

impl SplitBundle {
    /// Writes `train.jsonl`, `val.jsonl` and `test.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.to_owned(),
            source,
        })?;
        for (name, part) in SPLIT_FILES.iter().zip(self.parts()) {
            write_jsonl(&dir.join(name), part.examples())?;
        }
        Ok(())
    }

    /// Reads a bundle written by [`SplitBundle::save`]. Ratios and seed are
    /// not stored in the JSONL files and must be supplied.
    pub fn load(
        dir: &Path,
        task: TaskId,
        ratios: (f64, f64, f64),
        seed: u64,
    ) -> Result<Self, CorpusError> {
        let [train, validation, test] = SPLIT_FILES.map(|name| read_jsonl(&dir.join(name), task));
        Ok(Self {
            train: train?,
            validation: validation?,
            test: test?,
            ratios,
            seed,
        })
    }

    pub fn parts(&self) -> [&TaskDataset; 3] {
        [&self.train, &self.validation, &self.test]
    }
}
