use std::path::PathBuf;

use mhc_core::corpus::TaskDataset;
use mhc_core::metrics::{aggregate, ConfusionMatrix, MetricReport, TaskMetrics};
use mhc_core::trainer::{evaluate_features, featurize_dataset, Checkpoint};
use mhc_inference::InferenceClient;
use serde::Serialize;

use super::{
    checkpoint_path, eval_examples, load_splits, prompts_for, run_subdir, runtime, EVAL_DIR,
    REPORT_CSV, REPORT_JSON,
};
use crate::config::{EvalSource, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::{write_json, write_text, Manifest};

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    pub dir: PathBuf,
    pub report: MetricReport,
    pub per_run: Vec<MetricReport>,
}

/// Scores every run on the evaluation split and writes per-run reports
/// plus their mean ± std.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutput> {
    let splits = load_splits(cfg)?;
    let hash = cfg.hash();
    let per_run = match cfg.eval.source {
        EvalSource::Checkpoint => (0..cfg.runs)
            .map(|run| {
                let path = checkpoint_path(cfg, run);
                if !path.is_file() {
                    return Err(CliError::Data(format!(
                        "{}: missing checkpoint; run `mhc train` first",
                        path.display()
                    )));
                }
                let ck = Checkpoint::load(&path)?;
                let seed = ck.train_config.as_ref().map_or(run as u64, |t| t.seed);
                let tasks = cfg
                    .tasks
                    .iter()
                    .map(|&task| {
                        let ds =
                            TaskDataset::new(task, eval_examples(cfg, &splits[&task]).to_vec())?;
                        let cm = evaluate_features(
                            &ck.model,
                            task,
                            &featurize_dataset(&ds, &ck.featurizer),
                        )?;
                        Ok(TaskMetrics::from_confusion(task, cm, &[])?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(MetricReport::single(seed, hash.clone(), tasks))
            })
            .collect::<Result<Vec<_>>>()?,
        EvalSource::Backend => {
            let client = InferenceClient::new(cfg.backend.clone())?;
            let rt = runtime()?;
            (0..cfg.runs)
                .map(|run| {
                    let tasks = cfg
                        .tasks
                        .iter()
                        .map(|&task| {
                            let bundle = &splits[&task];
                            let examples = eval_examples(cfg, bundle);
                            let prompts = prompts_for(cfg, task, bundle, examples, run)?;
                            let parsed =
                                rt.block_on(client.classify_all(&prompts, task, cfg.eval.workers));
                            let spec = task.spec();
                            let mut cm = ConfusionMatrix::new(spec.num_classes());
                            let mut unparsed = vec![0u64; spec.num_classes()];
                            for (ex, p) in examples.iter().zip(parsed) {
                                match p?.label {
                                    Ok(label) => cm
                                        .record(
                                            ex.class(),
                                            spec.class_index(label).expect("parsed in range"),
                                        )
                                        .expect("class in range"),
                                    Err(_) => unparsed[ex.class()] += 1,
                                }
                            }
                            Ok(TaskMetrics::from_confusion(task, cm, &unparsed)?)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(MetricReport::single(
                        cfg.prompt.shot_seed + run as u64,
                        hash.clone(),
                        tasks,
                    ))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    let dir = cfg.run_dir().join(EVAL_DIR);
    for (run, r) in per_run.iter().enumerate() {
        write_json(
            &dir.join("runs").join(format!("{}.json", run_subdir(run))),
            r,
        )?;
    }
    let report = aggregate(&per_run)?;
    write_json(&dir.join(REPORT_JSON), &report)?;
    write_text(&dir.join(REPORT_CSV), &report.to_csv())?;
    let out = EvalOutput {
        dir,
        report,
        per_run,
    };
    Manifest::new("eval", Some(cfg), &out.dir).write(&out.dir)?;
    Ok(out)
}
