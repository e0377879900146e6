use std::collections::BTreeMap;
use std::path::PathBuf;

use mhc_core::trainer::{train, Checkpoint};
use serde::Serialize;

use super::{load_splits, run_subdir, CHECKPOINT_FILE, TRACE_FILE, TRAIN_DIR};
use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::{write_text, Manifest};

#[derive(Debug, Clone, Serialize)]
pub struct TrainedRun {
    pub run: usize,
    pub seed: u64,
    pub best_step: usize,
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutput {
    pub dir: PathBuf,
    pub config_hash: String,
    pub runs: Vec<TrainedRun>,
}

/// Trains `cfg.runs` models with seeds `train.seed + i` and writes a
/// checkpoint and a trace per run.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let splits = load_splits(cfg)?;
    let counts: BTreeMap<_, _> = splits
        .iter()
        .map(|(&t, b)| (t, b.train.class_counts().to_vec()))
        .collect();
    let loss = cfg.loss.resolve(&counts)?;
    let featurizer = cfg.train.featurizer();
    let dir = cfg.run_dir().join(TRAIN_DIR);

    let mut runs = Vec::new();
    for run in 0..cfg.runs {
        let tc = cfg.train.train_config(loss.clone(), run);
        log::info!("training run {run} (seed {})", tc.seed);
        let (model, trace) = train(&splits, &featurizer, &tc)?;
        let run_dir = dir.join(run_subdir(run));
        let checkpoint = run_dir.join(CHECKPOINT_FILE);
        let ck = Checkpoint {
            featurizer,
            model,
            recipe: cfg.train.recipe.clone(),
            train_config: Some(tc.clone()),
            best_step: trace.best_step,
        };
        std::fs::create_dir_all(&run_dir).map_err(crate::error::CliError::io(&run_dir))?;
        ck.save(&checkpoint)?;
        let trace_path = write_text(&run_dir.join(TRACE_FILE), &trace.to_csv())?;
        runs.push(TrainedRun {
            run,
            seed: tc.seed,
            best_step: trace.best_step,
            checkpoint,
            trace: trace_path,
        });
    }
    let out = TrainOutput {
        dir,
        config_hash: cfg.hash(),
        runs,
    };
    Manifest::new("train", Some(cfg), &out).write(&out.dir)?;
    Ok(out)
}
