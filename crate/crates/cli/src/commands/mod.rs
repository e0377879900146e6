//! One function per subcommand. Each returns a value describing what it
//! wrote so callers and tests can inspect it.

mod bench;
mod eval;
mod prompt;
mod report;
mod split;
mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mhc_core::corpus::{LabeledExample, SplitBundle, TaskDataset};
use mhc_core::promptkit::{build_prompt, select_shots, PromptMode};
use mhc_core::TaskId;

pub use bench::{bench_table, cmd_bench, BenchOutput};
pub use eval::{cmd_eval, EvalOutput};
pub use prompt::{cmd_prompt, render_one, PromptLine};
pub use report::{cmd_report, ReportOutput};
pub use split::{cmd_split, SplitOutput};
pub use train::{cmd_train, TrainOutput, TrainedRun};

use crate::config::{EvalSplitName, RunConfig};
use crate::error::{CliError, Result};

pub const SPLITS_DIR: &str = "splits";
pub const TRAIN_DIR: &str = "train";
pub const EVAL_DIR: &str = "eval";
pub const PROMPTS_DIR: &str = "prompts";
pub const BENCH_DIR: &str = "bench";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

pub fn split_dir(cfg: &RunConfig, task: TaskId) -> PathBuf {
    cfg.run_dir().join(SPLITS_DIR).join(task.to_string())
}

pub fn run_subdir(run: usize) -> String {
    format!("run{run}")
}

pub fn checkpoint_path(cfg: &RunConfig, run: usize) -> PathBuf {
    cfg.run_dir()
        .join(TRAIN_DIR)
        .join(run_subdir(run))
        .join(CHECKPOINT_FILE)
}

/// Reads the persisted splits of every configured task.
pub fn load_splits(cfg: &RunConfig) -> Result<BTreeMap<TaskId, SplitBundle>> {
    cfg.tasks
        .iter()
        .map(|&task| {
            let dir = split_dir(cfg, task);
            if !dir.is_dir() {
                return Err(CliError::Data(format!(
                    "{}: no splits for {task}; run `mhc split` first",
                    dir.display()
                )));
            }
            Ok((
                task,
                SplitBundle::load(&dir, task, cfg.split.ratios, cfg.split.seed)?,
            ))
        })
        .collect()
}

/// The configured evaluation split, cut to `eval.limit` examples.
pub fn eval_examples<'a>(cfg: &RunConfig, bundle: &'a SplitBundle) -> &'a [LabeledExample] {
    let ds: &TaskDataset = match cfg.eval.split {
        EvalSplitName::Validation => &bundle.validation,
        EvalSplitName::Test => &bundle.test,
    };
    let ex = ds.examples();
    &ex[..cfg.eval.limit.map_or(ex.len(), |l| l.min(ex.len()))]
}

/// Rendered prompt for every example, with shots for run `run` drawn from
/// the training split.
pub fn prompts_for(
    cfg: &RunConfig,
    task: TaskId,
    bundle: &SplitBundle,
    examples: &[LabeledExample],
    run: usize,
) -> Result<Vec<String>> {
    let mode = cfg.prompt.mode;
    let shots = match mode {
        PromptMode::ZeroShot => Vec::new(),
        PromptMode::FewShot(k) => {
            select_shots(&bundle.train, k, cfg.prompt.shot_seed + run as u64)?
        }
    };
    examples
        .iter()
        .map(|ex| Ok(build_prompt(task, mode, &ex.text, &shots)?.render()))
        .collect()
}

pub fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(CliError::io("<tokio runtime>"))
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
