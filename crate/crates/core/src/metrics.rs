//! Confusion matrices, accuracy, balanced accuracy and run aggregation.

use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::TaskId;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("runs cover different tasks")]
    MismatchedTasks,
    #[error("class index {index} out of range for {classes} classes")]
    OutOfRange { index: usize, classes: usize },
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Self {
        let classes = rows.len();
        assert!(
            rows.iter().all(|r| r.len() == classes),
            "matrix must be square"
        );
        Self {
            classes,
            counts: rows,
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<(), MetricsError> {
        for index in [truth, predicted] {
            if index >= self.classes {
                return Err(MetricsError::OutOfRange {
                    index,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    /// Recall of each class; `None` for classes with no true instances.
    pub fn class_tpr(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let n = self.row_total(c);
                (n > 0).then(|| self.counts[c][c] as f64 / n as f64)
            })
            .collect()
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self
            .counts
            .iter_mut()
            .flatten()
            .zip(other.counts.iter().flatten())
        {
            *a += b;
        }
    }
}

/// Fraction of examples on the diagonal.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let hits: u64 = (0..cm.classes()).map(|c| cm.get(c, c)).sum();
    Ok(hits as f64 / total as f64)
}

/// Mean recall over the classes that occur in the matrix. Classes with no
/// true instances are left out of the average rather than counted as 0.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let rates: Vec<f64> = cm.class_tpr().into_iter().flatten().collect();
    if rates.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Sample mean with an (n - 1) standard deviation when there are at least
/// two observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std: Option<f64>,
}

impl Estimate {
    pub fn single(v: f64) -> Self {
        Self { mean: v, std: None }
    }

    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean, std }
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.3} ± {:.3}", self.mean, s),
            None => write!(f, "{:.3}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: TaskId,
    pub accuracy: Estimate,
    pub balanced_accuracy: Estimate,
    /// Mean recall per class over the runs; `None` where a class never occurs.
    pub class_tpr: Vec<Option<f64>>,
    /// Summed over all runs.
    pub confusion: ConfusionMatrix,
    /// Responses that could not be parsed into a label. They count as wrong
    /// in accuracy and recall but never enter `confusion`.
    #[serde(default)]
    pub parse_failures: u64,
}

impl TaskMetrics {
    /// Metrics of one evaluation. `parse_failures` examples are counted as
    /// incorrect: they enlarge the denominator of accuracy and of the recall
    /// of their true class without entering any predicted column.
    pub fn from_confusion(
        task: TaskId,
        confusion: ConfusionMatrix,
        failures_per_class: &[u64],
    ) -> Result<Self, MetricsError> {
        let parse_failures: u64 = failures_per_class.iter().sum();
        let (acc, bacc, class_tpr) = if parse_failures == 0 {
            (
                accuracy(&confusion)?,
                balanced_accuracy(&confusion)?,
                confusion.class_tpr(),
            )
        } else {
            let total = confusion.total() + parse_failures;
            if total == 0 {
                return Err(MetricsError::EmptyMatrix);
            }
            let hits: u64 = (0..confusion.classes()).map(|c| confusion.get(c, c)).sum();
            let tpr: Vec<Option<f64>> = (0..confusion.classes())
                .map(|c| {
                    let n =
                        confusion.row_total(c) + failures_per_class.get(c).copied().unwrap_or(0);
                    (n > 0).then(|| confusion.get(c, c) as f64 / n as f64)
                })
                .collect();
            let present: Vec<f64> = tpr.iter().flatten().copied().collect();
            (
                hits as f64 / total as f64,
                present.iter().sum::<f64>() / present.len() as f64,
                tpr,
            )
        };
        Ok(Self {
            task,
            accuracy: Estimate::single(acc),
            balanced_accuracy: Estimate::single(bacc),
            class_tpr,
            confusion,
            parse_failures,
        })
    }
}

/// Per-task metrics of one or more runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub tasks: Vec<TaskMetrics>,
}

impl MetricReport {
    pub fn single(seed: u64, config_hash: impl Into<String>, tasks: Vec<TaskMetrics>) -> Self {
        Self {
            runs: 1,
            seeds: vec![seed],
            config_hash: config_hash.into(),
            tasks,
        }
    }

    pub fn task(&self, task: TaskId) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|t| t.task == task)
    }

    /// Two-row table (ACC, BACC) with one column per task, "mean ± std"
    /// cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for t in &self.tasks {
            write!(out, ",{}", t.task.column_name()).unwrap();
        }
        out.push('\n');
        for (name, get) in [
            (
                "ACC",
                (|t: &TaskMetrics| t.accuracy) as fn(&TaskMetrics) -> Estimate,
            ),
            ("BACC", |t: &TaskMetrics| t.balanced_accuracy),
        ] {
            out.push_str(name);
            for t in &self.tasks {
                write!(out, ",{}", get(t)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Combines single-run reports into mean ± std per task and metric.
pub fn aggregate(runs: &[MetricReport]) -> Result<MetricReport, MetricsError> {
    let first = runs.first().ok_or(MetricsError::NoRuns)?;
    let task_ids: Vec<TaskId> = first.tasks.iter().map(|t| t.task).collect();
    for r in runs {
        if r.tasks.iter().map(|t| t.task).ne(task_ids.iter().copied()) {
            return Err(MetricsError::MismatchedTasks);
        }
    }
    let tasks = task_ids
        .iter()
        .enumerate()
        .map(|(i, &task)| {
            let per_run: Vec<&TaskMetrics> = runs.iter().map(|r| &r.tasks[i]).collect();
            let accs: Vec<f64> = per_run.iter().map(|t| t.accuracy.mean).collect();
            let baccs: Vec<f64> = per_run.iter().map(|t| t.balanced_accuracy.mean).collect();
            let mut confusion = ConfusionMatrix::new(per_run[0].confusion.classes());
            for t in &per_run {
                confusion += &t.confusion;
            }
            let classes = per_run[0].class_tpr.len();
            let class_tpr = (0..classes)
                .map(|c| {
                    let vals: Vec<f64> = per_run.iter().filter_map(|t| t.class_tpr[c]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            TaskMetrics {
                task,
                accuracy: Estimate::from_samples(&accs),
                balanced_accuracy: Estimate::from_samples(&baccs),
                class_tpr,
                confusion,
                parse_failures: per_run.iter().map(|t| t.parse_failures).sum(),
            }
        })
        .collect();
    Ok(MetricReport {
        runs: runs.iter().map(|r| r.runs).sum(),
        seeds: runs.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
        config_hash: first.config_hash.clone(),
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect())
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&cm(&[&[4, 0], &[0, 7]])).unwrap(), 1.0);
        assert_abs_diff_eq!(
            accuracy(&cm(&[&[3, 1], &[2, 4]])).unwrap(),
            0.7,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            accuracy(&cm(&[&[1, 1, 1], &[1, 1, 1], &[1, 1, 1]])).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert_eq!(
            accuracy(&ConfusionMatrix::new(3)),
            Err(MetricsError::EmptyMatrix)
        );
    }

    #[test]
    fn balanced_accuracy_cases() {
        assert_eq!(balanced_accuracy(&cm(&[&[4, 0], &[0, 7]])).unwrap(), 1.0);
        assert_abs_diff_eq!(
            balanced_accuracy(&cm(&[&[3, 1], &[2, 4]])).unwrap(),
            0.7083,
            epsilon = 5e-5
        );
        assert_eq!(balanced_accuracy(&cm(&[&[9, 0], &[1, 0]])).unwrap(), 0.5);
        // The absent middle class is skipped.
        assert_eq!(
            balanced_accuracy(&cm(&[&[2, 0, 0], &[0, 0, 0], &[0, 0, 1]])).unwrap(),
            1.0
        );
        assert_eq!(
            balanced_accuracy(&ConfusionMatrix::new(2)),
            Err(MetricsError::EmptyMatrix)
        );
    }

    #[test]
    fn constant_predictor_scores_one_over_c() {
        let m = cm(&[&[5, 0, 0, 0], &[2, 0, 0, 0], &[9, 0, 0, 0], &[1, 0, 0, 0]]);
        assert_abs_diff_eq!(balanced_accuracy(&m).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn record_checks_range() {
        let mut m = ConfusionMatrix::new(2);
        m.record(1, 0).unwrap();
        assert_eq!(m.get(1, 0), 1);
        assert!(m.record(2, 0).is_err());
    }

    fn report(acc: f64) -> MetricReport {
        let mut t = TaskMetrics::from_confusion(TaskId::T1, cm(&[&[1, 0], &[0, 1]]), &[]).unwrap();
        t.accuracy = Estimate::single(acc);
        MetricReport::single(0, "h", vec![t])
    }

    #[test]
    fn aggregate_single_run() {
        let a = aggregate(&[report(0.8)]).unwrap();
        assert_eq!(a.tasks[0].accuracy, Estimate::single(0.8));
    }

    #[test]
    fn aggregate_three_runs() {
        let a = aggregate(&[report(0.80), report(0.82), report(0.84)]).unwrap();
        let e = a.tasks[0].accuracy;
        assert_abs_diff_eq!(e.mean, 0.82, epsilon = 1e-12);
        assert_abs_diff_eq!(e.std.unwrap(), 0.02, epsilon = 1e-12);
        assert_eq!(a.runs, 3);
        assert_eq!(a.tasks[0].confusion.total(), 6);
    }

    #[test]
    fn aggregate_identical_runs_has_zero_std() {
        let a = aggregate(&[report(0.5), report(0.5)]).unwrap();
        assert_eq!(a.tasks[0].accuracy.std, Some(0.0));
    }

    #[test]
    fn aggregate_rejects_mismatched_tasks() {
        let mut other = report(0.5);
        other.tasks[0].task = TaskId::T2;
        assert_eq!(
            aggregate(&[report(0.5), other]),
            Err(MetricsError::MismatchedTasks)
        );
        assert_eq!(aggregate(&[]), Err(MetricsError::NoRuns));
    }

    #[test]
    fn parse_failures_count_as_wrong() {
        let t = TaskMetrics::from_confusion(TaskId::T1, cm(&[&[2, 0], &[0, 1]]), &[0, 1]).unwrap();
        assert_eq!(t.parse_failures, 1);
        assert_abs_diff_eq!(t.accuracy.mean, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(t.balanced_accuracy.mean, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn csv_layout() {
        let a = aggregate(&[report(0.80), report(0.82), report(0.84)]).unwrap();
        assert_eq!(
            a.to_csv(),
            "metric,Task 1\nACC,0.820 ± 0.020\nBACC,1.000 ± 0.000\n"
        );
    }
}
