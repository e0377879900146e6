use std::collections::BTreeMap;
use std::path::PathBuf;

use mhc_core::corpus::{load_task_csv, stratified_split};
use mhc_core::TaskId;
use serde::Serialize;

use super::{split_dir, SPLITS_DIR};
use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::Manifest;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitCounts {
    /// Per-class counts of train, validation and test.
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Rows skipped while loading.
    pub dropped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitOutput {
    pub dir: PathBuf,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub counts: BTreeMap<TaskId, SplitCounts>,
}

/// Loads each task's CSV, splits it and writes the JSONL partitions.
pub fn cmd_split(cfg: &RunConfig) -> Result<SplitOutput> {
    cfg.validate_inputs()?;
    let mut counts = BTreeMap::new();
    for &task in &cfg.tasks {
        let src = &cfg.data[&task];
        let loaded = load_task_csv(&src.path, task, &src.label_map(task)?, &src.csv_options())?;
        let bundle = stratified_split(&loaded.dataset, cfg.split.ratios, cfg.split.seed)?;
        bundle.save(&split_dir(cfg, task))?;
        counts.insert(
            task,
            SplitCounts {
                train: bundle.train.class_counts().to_vec(),
                validation: bundle.validation.class_counts().to_vec(),
                test: bundle.test.class_counts().to_vec(),
                dropped: loaded.dropped,
            },
        );
    }
    let out = SplitOutput {
        dir: cfg.run_dir().join(SPLITS_DIR),
        ratios: cfg.split.ratios,
        seed: cfg.split.seed,
        counts,
    };
    Manifest::new("split", Some(cfg), &out).write(&out.dir)?;
    Ok(out)
}
