use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mhc_core::metrics::{Estimate, MetricReport, TaskMetrics};
use mhc_core::TaskId;
use serde::Serialize;

use super::{EVAL_DIR, REPORT_JSON};
use crate::error::{CliError, Result};
use crate::manifest::{read_json, write_json, write_text, Manifest};
use crate::plot::{bar_chart, Series};

pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";

#[derive(Debug, Clone, Serialize)]
pub struct ReportOutput {
    pub dir: PathBuf,
    pub runs: Vec<String>,
    pub files: Vec<PathBuf>,
}

type Metric = (&'static str, fn(&TaskMetrics) -> Estimate);

const FAMILIES: [Metric; 2] = [("ACC", |t| t.accuracy), ("BACC", |t| t.balanced_accuracy)];

fn run_name(dir: &Path) -> String {
    dir.file_name().map_or_else(
        || dir.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

/// Rows `metric,task,<run>...`; a task missing from a run leaves its cell
/// empty.
pub fn comparison_table(names: &[String], reports: &[MetricReport]) -> String {
    let mut tasks: Vec<TaskId> = reports
        .iter()
        .flat_map(|r| r.tasks.iter().map(|t| t.task))
        .collect();
    tasks.sort();
    tasks.dedup();
    let mut out = String::from("metric,task");
    for n in names {
        write!(out, ",{n}").unwrap();
    }
    out.push('\n');
    for (metric, get) in FAMILIES {
        for &task in &tasks {
            write!(out, "{metric},{}", task.column_name()).unwrap();
            for r in reports {
                match r.task(task) {
                    Some(t) => write!(out, ",{}", get(t)).unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Merges the evaluation reports of `run_dirs` into one table and,
/// with `plot`, one bar chart per metric family.
pub fn cmd_report(run_dirs: &[PathBuf], out: &Path, plot: bool) -> Result<ReportOutput> {
    if run_dirs.is_empty() {
        return Err(CliError::Usage(
            "report needs at least one run directory".into(),
        ));
    }
    let reports: Vec<MetricReport> = run_dirs
        .iter()
        .map(|d| read_json(&d.join(EVAL_DIR).join(REPORT_JSON)))
        .collect::<Result<_>>()?;
    let names: Vec<String> = run_dirs.iter().map(|d| run_name(d)).collect();

    let mut files = vec![
        write_text(
            &out.join(COMPARISON_CSV),
            &comparison_table(&names, &reports),
        )?,
        write_json(
            &out.join(COMPARISON_JSON),
            &names.iter().zip(&reports).collect::<Vec<_>>(),
        )?,
    ];
    if plot {
        let mut tasks: Vec<TaskId> = reports
            .iter()
            .flat_map(|r| r.tasks.iter().map(|t| t.task))
            .collect();
        tasks.sort();
        tasks.dedup();
        let groups: Vec<String> = tasks.iter().map(|t| t.column_name()).collect();
        for (metric, get) in FAMILIES {
            let series: Vec<Series> = names
                .iter()
                .zip(&reports)
                .map(|(name, r)| Series {
                    name: name.clone(),
                    values: tasks.iter().map(|&t| r.task(t).map(get)).collect(),
                })
                .collect();
            let svg = bar_chart(metric, &groups, &series);
            files.push(write_text(
                &out.join(format!("{}.svg", metric.to_lowercase())),
                &svg,
            )?);
        }
    }
    let output = ReportOutput {
        dir: out.to_owned(),
        runs: names,
        files,
    };
    Manifest::new("report", None, &run_dirs).write(out)?;
    Ok(output)
}
