//! Desk-scale multi-task training: hashed bag-of-words features, a shared
//! one-hidden-layer trunk and per-task heads, optimized with the combined
//! cross-entropy / soft balanced-accuracy objective over mixed-task batches.

mod checkpoint;
mod featurize;
mod model;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use featurize::{tokenize, Featurizer, SparseVector};
pub use model::{AdamState, ClassifierModel, Gradients, Head, TaskBatch};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SplitBundle, TaskDataset};
use crate::imbalance::{make_batch, ImbalanceError, TaskWeights};
use crate::loss::{LossConfig, LossError};
use crate::metrics::{accuracy, balanced_accuracy, ConfusionMatrix};
use crate::task::TaskId;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("input has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model has no head for {0}")]
    UnknownTask(TaskId),
    #[error("task {0} has an empty {1} split")]
    EmptySplit(TaskId, &'static str),
    #[error("no tasks to train")]
    NoTasks,
    #[error("loss became non-finite at step {step}")]
    DivergedLoss { step: usize, trace: Box<TrainTrace> },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sampling(#[from] ImbalanceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

fn default_steps() -> usize {
    2000
}
fn default_batch_size() -> usize {
    32
}
fn default_lr() -> f64 {
    0.01
}
fn default_hidden() -> usize {
    64
}
fn default_eval_every() -> usize {
    100
}
fn default_schedule() -> LrSchedule {
    LrSchedule::Constant
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sgd
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_schedule")]
    pub schedule: LrSchedule,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: LossConfig,
    /// Task sampling weights; uniform over the trained tasks when absent.
    #[serde(default)]
    pub task_weights: Option<BTreeMap<TaskId, f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            batch_size: default_batch_size(),
            learning_rate: default_lr(),
            schedule: default_schedule(),
            optimizer: default_optimizer(),
            hidden: default_hidden(),
            eval_every: default_eval_every(),
            seed: 0,
            loss: LossConfig::default(),
            task_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let progress = step as f64 / self.steps.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        if self.hidden == 0 {
            return Err(TrainError::InvalidConfig(
                "hidden must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// One featurized example: input vector and zero-based class index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExample {
    pub input: SparseVector,
    pub class: usize,
}

/// Featurized train and validation data of one task.
#[derive(Debug, Clone, Default)]
pub struct FeatureSplits {
    pub train: Vec<FeatureExample>,
    pub validation: Vec<FeatureExample>,
}

pub fn featurize_dataset(ds: &TaskDataset, featurizer: &Featurizer) -> Vec<FeatureExample> {
    ds.examples()
        .iter()
        .map(|ex| FeatureExample {
            input: featurizer.featurize(&ex.text),
            class: ex.class(),
        })
        .collect()
}

/// Data an evaluation point was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Validation,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Validation => "validation",
        }
    }
}

/// Metrics of one task on a whole split at one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPoint {
    pub step: usize,
    pub task: TaskId,
    pub split: EvalSplit,
    /// `lambda * (ce + beta * bacc)` over the split.
    pub loss: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainTrace {
    /// Training objective of each step, index = step - 1.
    pub train_loss: Vec<f64>,
    /// Validation points at each evaluation step, then training-split
    /// points of the final model.
    pub evals: Vec<EvalPoint>,
    /// Step of the returned checkpoint (lowest summed validation loss).
    pub best_step: usize,
}

impl TrainTrace {
    /// `step,split,task,loss,acc,bacc`. Per-step objective rows use split
    /// `batch` and leave task and metric columns empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,split,task,loss,acc,bacc\n");
        for (i, l) in self.train_loss.iter().enumerate() {
            writeln!(out, "{},batch,,{l},,", i + 1).unwrap();
        }
        for e in &self.evals {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.step,
                e.split.name(),
                e.task,
                e.loss,
                e.accuracy,
                e.balanced_accuracy
            )
            .unwrap();
        }
        out
    }

    /// Validation points recorded at `step`.
    pub fn evals_at(&self, step: usize) -> impl Iterator<Item = &EvalPoint> {
        self.evals
            .iter()
            .filter(move |e| e.step == step && e.split == EvalSplit::Validation)
    }

    /// Training-split points of the final model.
    pub fn final_train(&self) -> impl Iterator<Item = &EvalPoint> {
        self.evals.iter().filter(|e| e.split == EvalSplit::Train)
    }
}

/// Predicted class per row: argmax with ties resolved to the lowest index.
pub fn argmax_rows(logits: &ndarray::Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Confusion matrix of `model` on featurized examples of `task`.
pub fn evaluate_features(
    model: &ClassifierModel,
    task: TaskId,
    examples: &[FeatureExample],
) -> Result<ConfusionMatrix, TrainError> {
    let mut cm = ConfusionMatrix::new(task.spec().num_classes());
    if examples.is_empty() {
        return Ok(cm);
    }
    let inputs: Vec<&SparseVector> = examples.iter().map(|e| &e.input).collect();
    let logits = model.forward(&inputs, task)?;
    for (pred, ex) in argmax_rows(&logits).into_iter().zip(examples) {
        cm.record(ex.class, pred).expect("class in range");
    }
    Ok(cm)
}

/// Confusion matrix of `model` on a text split.
pub fn evaluate(
    model: &ClassifierModel,
    featurizer: &Featurizer,
    split: &TaskDataset,
) -> Result<ConfusionMatrix, TrainError> {
    evaluate_features(model, split.task, &featurize_dataset(split, featurizer))
}

fn eval_points(
    model: &ClassifierModel,
    data: &BTreeMap<TaskId, FeatureSplits>,
    cfg: &TrainConfig,
    step: usize,
    split: EvalSplit,
) -> Result<Vec<EvalPoint>, TrainError> {
    data.iter()
        .map(|(&task, splits)| {
            let examples = match split {
                EvalSplit::Train => &splits.train,
                EvalSplit::Validation => &splits.validation,
            };
            let batch = TaskBatch {
                task,
                inputs: examples.iter().map(|e| &e.input).collect(),
                labels: examples.iter().map(|e| e.class).collect(),
            };
            let (loss, _) = model.loss_and_gradients(std::slice::from_ref(&batch), &cfg.loss)?;
            let cm = evaluate_features(model, task, examples)?;
            Ok(EvalPoint {
                step,
                task,
                split,
                loss: loss.value,
                accuracy: accuracy(&cm).unwrap_or(0.0),
                balanced_accuracy: balanced_accuracy(&cm).unwrap_or(0.0),
            })
        })
        .collect()
}

/// Trains on featurized data. Deterministic for a fixed `cfg.seed`.
///
/// Validation is scored at step 0, every `eval_every` steps and after the
/// last step; the model with the lowest summed validation loss is returned
/// (earliest wins ties).
pub fn train_features(
    data: &BTreeMap<TaskId, FeatureSplits>,
    input_dim: usize,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainTrace), TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::NoTasks);
    }
    for (&task, s) in data {
        if s.train.is_empty() {
            return Err(TrainError::EmptySplit(task, "train"));
        }
        if s.validation.is_empty() {
            return Err(TrainError::EmptySplit(task, "validation"));
        }
    }
    let tasks: Vec<TaskId> = data.keys().copied().collect();
    let weights = match &cfg.task_weights {
        Some(w) => TaskWeights::new(
            tasks
                .iter()
                .map(|t| (*t, w.get(t).copied().unwrap_or(1.0)))
                .collect(),
        )?,
        None => TaskWeights::uniform(&tasks)?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ClassifierModel::new(input_dim, cfg.hidden, &tasks, &mut rng);
    let mut adam = (cfg.optimizer == OptimizerKind::Adam).then(|| AdamState::new(&model));
    let pools: BTreeMap<TaskId, Vec<FeatureExample>> =
        data.iter().map(|(&t, s)| (t, s.train.clone())).collect();

    let mut trace = TrainTrace::default();
    let score = |points: &[EvalPoint]| points.iter().map(|p| p.loss).sum::<f64>();
    let first = eval_points(&model, data, cfg, 0, EvalSplit::Validation)?;
    let mut best = (score(&first), model.clone());
    trace.evals.extend(first);

    for step in 1..=cfg.steps {
        let drawn = make_batch(&pools, &weights, cfg.batch_size, &mut rng)?;
        let mut grouped: BTreeMap<TaskId, TaskBatch> = BTreeMap::new();
        for (task, ex) in drawn {
            let b = grouped.entry(task).or_insert_with(|| TaskBatch {
                task,
                inputs: Vec::new(),
                labels: Vec::new(),
            });
            b.inputs.push(&ex.input);
            b.labels.push(ex.class);
        }
        let batches: Vec<TaskBatch> = grouped.into_values().collect();
        let (loss, grads) = model.loss_and_gradients(&batches, &cfg.loss)?;
        trace.train_loss.push(loss.value);
        if !loss.value.is_finite() {
            return Err(TrainError::DivergedLoss {
                step,
                trace: Box::new(trace),
            });
        }
        let lr = cfg.learning_rate_at(step - 1);
        match adam.as_mut() {
            Some(state) => state.step(&mut model, &grads, lr),
            None => model.apply_sgd(&grads, lr),
        }
        if !model.all_finite() {
            return Err(TrainError::DivergedLoss {
                step,
                trace: Box::new(trace),
            });
        }

        if step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            let points = eval_points(&model, data, cfg, step, EvalSplit::Validation)?;
            let s = score(&points);
            if s < best.0 {
                best = (s, model.clone());
                trace.best_step = step;
            }
            trace.evals.extend(points);
        }
    }
    let last = eval_points(&model, data, cfg, cfg.steps, EvalSplit::Train)?;
    trace.evals.extend(last);
    Ok((best.1, trace))
}

/// Featurizes each task's train and validation splits and trains on them.
pub fn train(
    splits: &BTreeMap<TaskId, SplitBundle>,
    featurizer: &Featurizer,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainTrace), TrainError> {
    let data = splits
        .iter()
        .map(|(&task, b)| {
            (
                task,
                FeatureSplits {
                    train: featurize_dataset(&b.train, featurizer),
                    validation: featurize_dataset(&b.validation, featurizer),
                },
            )
        })
        .collect();
    train_features(&data, featurizer.dim, cfg)
}
