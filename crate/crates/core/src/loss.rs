//! Cross-entropy and the soft balanced-accuracy surrogate, with closed-form
//! gradients with respect to the logits.
//!
//! The surrogate replaces each hard per-class recall with a smooth estimate:
//!
//! ```text
//! m[i,c]   = z[i,c] - logsumexp_{k != c} z[i,k]
//! s[i,c]   = sigmoid(alpha * m[i,c])
//! tpr[c]   = mean_{i : y_i = c} s[i,c]          (0 when class c is absent)
//! L_bacc   = 1 - sum_c gamma[c] * tpr[c] / sum_c gamma[c]
//! L_total  = sum_t lambda[t] * (L_ce[t] + beta * L_bacc[t])
//! ```
//!
//! `m[i,c] > 0` exactly when `p(c | x_i) > 1/2`, so for large `alpha` the
//! soft recall approaches the recall of a "probability above one half"
//! decision rule. Everything is computed in `f64`.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imbalance::ClassWeights;
use crate::task::TaskId;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("batch has no rows")]
    EmptyBatch,
    #[error("batch has {rows} logit rows but {labels} labels")]
    LabelCountMismatch { rows: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite logit at ({row}, {col})")]
    NonFiniteInput { row: usize, col: usize },
    #[error("margins need at least two classes")]
    SingleClass,
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
}

/// Logits of one task's samples together with their class indices.
///
/// Labels are zero-based class indices, not schema labels; T6's 1..=5 labels
/// are shifted before they reach this type.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    pub task: TaskId,
    logits: Array2<f64>,
    labels: Vec<usize>,
}

impl LogitBatch {
    pub fn new(task: TaskId, logits: Array2<f64>, labels: Vec<usize>) -> Result<Self, LossError> {
        let (rows, classes) = logits.dim();
        if rows == 0 {
            return Err(LossError::EmptyBatch);
        }
        if classes != task.spec().num_classes() {
            return Err(LossError::LengthMismatch {
                what: "logit columns",
                got: classes,
                expected: task.spec().num_classes(),
            });
        }
        if labels.len() != rows {
            return Err(LossError::LabelCountMismatch {
                rows,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(LossError::LabelOutOfRange { label, classes });
        }
        check_finite(&logits)?;
        Ok(Self {
            task,
            logits,
            labels,
        })
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.ncols()
    }

    /// Same labels and task, different logits. Used by the gradient checker.
    pub fn with_logits(&self, logits: Array2<f64>) -> Result<Self, LossError> {
        Self::new(self.task, logits, self.labels.clone())
    }
}

fn default_alpha() -> f64 {
    10.0
}

fn default_beta() -> f64 {
    1.0
}

/// Hyperparameters of the combined objective.
///
/// `gamma`, `lambda` and `class_weights` are keyed by task; a missing entry
/// means uniform class scaling, unit task weight and unweighted
/// cross-entropy respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Sigmoid sharpness applied to the margins.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Weight of the surrogate term relative to cross-entropy.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub gamma: BTreeMap<TaskId, Vec<f64>>,
    #[serde(default)]
    pub lambda: BTreeMap<TaskId, f64>,
    #[serde(default)]
    pub class_weights: BTreeMap<TaskId, ClassWeights>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            gamma: BTreeMap::new(),
            lambda: BTreeMap::new(),
            class_weights: BTreeMap::new(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(LossError::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(LossError::InvalidConfig(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        for (task, g) in &self.gamma {
            if g.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(LossError::InvalidConfig(format!(
                    "gamma for {task} must be positive"
                )));
            }
        }
        for (task, &l) in &self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(LossError::InvalidConfig(format!(
                    "lambda for {task} must be positive, got {l}"
                )));
            }
        }
        Ok(())
    }

    pub fn lambda_for(&self, task: TaskId) -> f64 {
        self.lambda.get(&task).copied().unwrap_or(1.0)
    }

    pub fn gamma_for(&self, task: TaskId, classes: usize) -> Result<Vec<f64>, LossError> {
        match self.gamma.get(&task) {
            None => Ok(vec![1.0; classes]),
            Some(g) if g.len() == classes => Ok(g.clone()),
            Some(g) => Err(LossError::LengthMismatch {
                what: "gamma",
                got: g.len(),
                expected: classes,
            }),
        }
    }
}

/// Value and logit-gradient of a loss over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Array2<f64>,
    /// Soft per-class recall, present for the surrogate.
    pub soft_tpr: Option<Vec<f64>>,
    /// Per-sample margins, present for the surrogate.
    pub margins: Option<Array2<f64>>,
}

/// Contribution of one task batch to the total objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskTerm {
    pub task: TaskId,
    pub lambda: f64,
    pub ce: f64,
    pub bacc: f64,
}

/// Output of [`total_loss`]: one gradient matrix per input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub grads: Vec<Array2<f64>>,
    pub terms: Vec<TaskTerm>,
}

/// LoRA recipe of the full-scale model, carried verbatim into run reports.
/// Has no effect on the desk-scale trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecipe {
    pub lora_rank: u32,
    pub lora_scale: f64,
    pub lora_dropout: f64,
    pub target_projections: Vec<String>,
    pub trainable_fraction: f64,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self {
            lora_rank: 16,
            lora_scale: 32.0,
            lora_dropout: 0.05,
            target_projections: vec!["query".into(), "value".into()],
            trainable_fraction: 0.001,
        }
    }
}

fn check_finite(z: &Array2<f64>) -> Result<(), LossError> {
    for ((row, col), v) in z.indexed_iter() {
        if !v.is_finite() {
            return Err(LossError::NonFiniteInput { row, col });
        }
    }
    Ok(())
}

fn logsumexp<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let (arg, max) =
        values.clone().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |b, (k, v)| if v > b.1 { (k, v) } else { b },
        );
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // ln_1p keeps precision when the maximum dominates.
    let rest: f64 = values
        .enumerate()
        .filter(|&(k, _)| k != arg)
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + rest.ln_1p()
}

/// Overflow-safe logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// sigma'(x) written as sigma(x) * sigma(-x) so it stays accurate in both tails.
fn sigmoid_slope(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

/// Row-wise log-softmax using a max-shifted log-sum-exp.
pub fn log_softmax(z: &Array2<f64>) -> Result<Array2<f64>, LossError> {
    check_finite(z)?;
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        // Subtract the max first so the dominant entry stays exact.
        row.mapv_inplace(|v| v - max);
        let tail = logsumexp(row.iter().copied());
        row.mapv_inplace(|v| v - tail);
    }
    Ok(out)
}

/// Mean negative log-likelihood of the true class.
///
/// With class weights each sample's term is scaled by `w[y_i]` and the sum is
/// normalized by `sum_i w[y_i]` instead of the batch size.
pub fn ce_loss(
    batch: &LogitBatch,
    weights: Option<&ClassWeights>,
) -> Result<LossOutput, LossError> {
    let classes = batch.num_classes();
    if let Some(w) = weights {
        if w.len() != classes {
            return Err(LossError::LengthMismatch {
                what: "class weights",
                got: w.len(),
                expected: classes,
            });
        }
    }
    let logp = log_softmax(batch.logits())?;
    let sample_weight = |y: usize| weights.map_or(1.0, |w| w.get(y));
    let norm: f64 = batch.labels().iter().map(|&y| sample_weight(y)).sum();

    let mut value = 0.0;
    let mut grad = logp.mapv(f64::exp);
    for (i, &y) in batch.labels().iter().enumerate() {
        let scale = sample_weight(y) / norm;
        value -= scale * logp[[i, y]];
        let mut row = grad.row_mut(i);
        row[y] -= 1.0;
        row *= scale;
    }
    Ok(LossOutput {
        value,
        grad,
        soft_tpr: None,
        margins: None,
    })
}

/// Log-sum-exp of a row with entry `skip` left out.
fn logsumexp_excluding(row: ArrayView1<f64>, skip: usize) -> f64 {
    logsumexp(
        row.iter()
            .enumerate()
            .filter(move |&(k, _)| k != skip)
            .map(|(_, &v)| v),
    )
}

/// Per-class margins `m[i,c] = z[i,c] - logsumexp_{k != c} z[i,k]`.
pub fn margins(z: &Array2<f64>) -> Result<Array2<f64>, LossError> {
    let classes = z.ncols();
    if classes < 2 {
        return Err(LossError::SingleClass);
    }
    check_finite(z)?;
    let mut m = Array2::zeros(z.dim());
    for (i, row) in z.rows().into_iter().enumerate() {
        for c in 0..classes {
            m[[i, c]] = if classes == 2 {
                row[c] - row[1 - c]
            } else {
                row[c] - logsumexp_excluding(row, c)
            };
        }
    }
    Ok(m)
}

/// Soft correctness scores `sigmoid(alpha * m)`.
pub fn soft_scores(m: &Array2<f64>, alpha: f64) -> Array2<f64> {
    m.mapv(|v| sigmoid(alpha * v))
}

/// Soft per-class recall: mean score of the true class over the samples of
/// each class. Classes with no samples get 0.
pub fn soft_tpr(s: &Array2<f64>, labels: &[usize], classes: usize) -> Vec<f64> {
    let mut sum = vec![0.0; classes];
    let mut count = vec![0usize; classes];
    for (i, &y) in labels.iter().enumerate() {
        sum[y] += s[[i, y]];
        count[y] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect()
}

/// Soft balanced-accuracy loss `1 - sum_c gamma_c * tpr_c / sum_c gamma_c`.
///
/// The gamma normalizer runs over every class of the schema, including
/// classes missing from this batch.
pub fn bacc_loss(batch: &LogitBatch, cfg: &LossConfig) -> Result<LossOutput, LossError> {
    cfg.validate()?;
    let z = batch.logits();
    let classes = batch.num_classes();
    let gamma = cfg.gamma_for(batch.task, classes)?;
    let gamma_sum: f64 = gamma.iter().sum();

    let m = margins(z)?;
    let s = soft_scores(&m, cfg.alpha);
    let tpr = soft_tpr(&s, batch.labels(), classes);
    let value = 1.0 - gamma.iter().zip(&tpr).map(|(g, t)| g * t).sum::<f64>() / gamma_sum;

    let mut count = vec![0usize; classes];
    for &y in batch.labels() {
        count[y] += 1;
    }

    let mut grad = Array2::zeros(z.dim());
    for (i, &c) in batch.labels().iter().enumerate() {
        let coef = gamma[c] / gamma_sum / count[c] as f64
            * cfg.alpha
            * sigmoid_slope(cfg.alpha * m[[i, c]]);
        let row = z.row(i);
        let lse_rest = logsumexp_excluding(row, c);
        for k in 0..classes {
            grad[[i, k]] = if k == c {
                -coef
            } else {
                coef * (row[k] - lse_rest).exp()
            };
        }
    }

    Ok(LossOutput {
        value,
        grad,
        soft_tpr: Some(tpr),
        margins: Some(m),
    })
}

/// Multi-task objective `sum_t lambda_t * (L_ce + beta * L_bacc)`.
///
/// Cross-entropy uses the task's class weights when `cfg.class_weights`
/// holds an entry for it. The surrogate is skipped entirely when
/// `beta == 0`.
pub fn total_loss(batches: &[LogitBatch], cfg: &LossConfig) -> Result<TotalLoss, LossError> {
    if batches.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    cfg.validate()?;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(batches.len());
    let mut terms = Vec::with_capacity(batches.len());
    for batch in batches {
        let lambda = cfg.lambda_for(batch.task);
        let ce = ce_loss(batch, cfg.class_weights.get(&batch.task))?;
        let mut grad = ce.grad * lambda;
        let mut bacc_value = 0.0;
        if cfg.beta > 0.0 {
            let bacc = bacc_loss(batch, cfg)?;
            bacc_value = bacc.value;
            grad.scaled_add(lambda * cfg.beta, &bacc.grad);
        }
        value += lambda * (ce.value + cfg.beta * bacc_value);
        grads.push(grad);
        terms.push(TaskTerm {
            task: batch.task,
            lambda,
            ce: ce.value,
            bacc: bacc_value,
        });
    }
    Ok(TotalLoss {
        value,
        grads,
        terms,
    })
}

/// Which objective [`finite_diff_check`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Bacc,
    Total,
}

/// Largest relative disagreement between an analytic gradient and central
/// differences of `f` around `x`:
/// `max_j |g_j - fd_j| / max(1e-8, |fd_j|)`.
pub fn max_relative_gradient_error<F>(mut f: F, x: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        probe[j] = x[j] + eps;
        let up = f(&probe);
        probe[j] = x[j] - eps;
        let down = f(&probe);
        probe[j] = x[j];
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[j] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Checks the closed-form gradient of `kind` against central differences.
///
/// For `CrossEntropy` and `Bacc` every batch is checked on its own and the
/// worst error is returned; `Total` perturbs all batches jointly.
pub fn finite_diff_check(
    kind: LossKind,
    batches: &[LogitBatch],
    cfg: &LossConfig,
    eps: f64,
) -> Result<f64, LossError> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(LossError::InvalidConfig(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }
    if batches.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    match kind {
        LossKind::CrossEntropy | LossKind::Bacc => {
            let eval = |b: &LogitBatch| match kind {
                LossKind::CrossEntropy => ce_loss(b, cfg.class_weights.get(&b.task)),
                _ => bacc_loss(b, cfg),
            };
            let mut worst = 0.0f64;
            for batch in batches {
                let analytic = eval(batch)?;
                let shape = batch.logits().dim();
                let x: Vec<f64> = batch.logits().iter().copied().collect();
                let g: Vec<f64> = analytic.grad.iter().copied().collect();
                let err = max_relative_gradient_error(
                    |p| {
                        let z = Array2::from_shape_vec(shape, p.to_vec()).expect("shape");
                        eval(&batch.with_logits(z).expect("finite probe"))
                            .expect("loss")
                            .value
                    },
                    &x,
                    &g,
                    eps,
                );
                worst = worst.max(err);
            }
            Ok(worst)
        }
        LossKind::Total => {
            let analytic = total_loss(batches, cfg)?;
            let x: Vec<f64> = batches
                .iter()
                .flat_map(|b| b.logits().iter().copied())
                .collect();
            let g: Vec<f64> = analytic
                .grads
                .iter()
                .flat_map(|g| g.iter().copied())
                .collect();
            Ok(max_relative_gradient_error(
                |p| {
                    let mut offset = 0;
                    let probed: Vec<LogitBatch> = batches
                        .iter()
                        .map(|b| {
                            let n = b.logits().len();
                            let z = Array2::from_shape_vec(
                                b.logits().dim(),
                                p[offset..offset + n].to_vec(),
                            )
                            .expect("shape");
                            offset += n;
                            b.with_logits(z).expect("finite probe")
                        })
                        .collect();
                    total_loss(&probed, cfg).expect("loss").value
                },
                &x,
                &g,
                eps,
            ))
        }
    }
}
