use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::featurize::SparseVector;
use super::TrainError;
use crate::loss::{total_loss, LogitBatch, LossConfig, TotalLoss};
use crate::task::TaskId;

/// Output layer of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Shared ReLU trunk with one linear head per task.
///
/// `logits = relu(x W + b) V_t + c_t`. The trunk starts from N(0, 1/dim)
/// and the heads from zero, so an untrained model outputs all-zero logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub trunk: Array2<f64>,
    pub trunk_bias: Array1<f64>,
    pub heads: BTreeMap<TaskId, Head>,
}

/// Inputs and class indices of one task inside a training step.
#[derive(Debug, Clone)]
pub struct TaskBatch<'a> {
    pub task: TaskId,
    pub inputs: Vec<&'a SparseVector>,
    pub labels: Vec<usize>,
}

/// Parameter gradients. Trunk rows are stored only where some input was
/// non-zero; heads only for tasks present in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub trunk_rows: BTreeMap<u32, Array1<f64>>,
    pub trunk_bias: Array1<f64>,
    pub heads: BTreeMap<TaskId, Head>,
}

struct Activations {
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl ClassifierModel {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: usize,
        tasks: &[TaskId],
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, (1.0 / input_dim as f64).sqrt()).expect("valid std");
        let trunk = Array2::from_shape_simple_fn((input_dim, hidden), || normal.sample(rng));
        let heads = tasks
            .iter()
            .map(|&t| {
                let c = t.spec().num_classes();
                (
                    t,
                    Head {
                        weight: Array2::zeros((hidden, c)),
                        bias: Array1::zeros(c),
                    },
                )
            })
            .collect();
        Self {
            trunk,
            trunk_bias: Array1::zeros(hidden),
            heads,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.trunk.ncols()
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        self.heads.keys().copied().collect()
    }

    fn head(&self, task: TaskId) -> Result<&Head, TrainError> {
        self.heads.get(&task).ok_or(TrainError::UnknownTask(task))
    }

    fn trunk_forward(&self, inputs: &[&SparseVector]) -> Result<Activations, TrainError> {
        let h = self.hidden();
        let mut pre = Array2::zeros((inputs.len(), h));
        for (i, x) in inputs.iter().enumerate() {
            if x.dim != self.input_dim() {
                return Err(TrainError::DimensionMismatch {
                    expected: self.input_dim(),
                    got: x.dim,
                });
            }
            let mut row = pre.row_mut(i);
            row.assign(&self.trunk_bias);
            for &(j, v) in &x.entries {
                row.scaled_add(v, &self.trunk.row(j as usize));
            }
        }
        let hidden = pre.mapv(|v| v.max(0.0));
        Ok(Activations { pre, hidden })
    }

    /// Logits `[N x C_task]` for a batch of inputs.
    pub fn forward(
        &self,
        inputs: &[&SparseVector],
        task: TaskId,
    ) -> Result<Array2<f64>, TrainError> {
        let head = self.head(task)?;
        let act = self.trunk_forward(inputs)?;
        Ok(act.hidden.dot(&head.weight) + &head.bias)
    }

    /// Objective value and parameter gradients over one mixed-task step.
    pub fn loss_and_gradients(
        &self,
        batches: &[TaskBatch<'_>],
        cfg: &LossConfig,
    ) -> Result<(TotalLoss, Gradients), TrainError> {
        let mut acts = Vec::with_capacity(batches.len());
        let mut logit_batches = Vec::with_capacity(batches.len());
        for b in batches {
            let head = self.head(b.task)?;
            let act = self.trunk_forward(&b.inputs)?;
            let logits = act.hidden.dot(&head.weight) + &head.bias;
            logit_batches.push(LogitBatch::new(b.task, logits, b.labels.clone())?);
            acts.push(act);
        }
        let total = total_loss(&logit_batches, cfg)?;

        let mut grads = Gradients {
            trunk_rows: BTreeMap::new(),
            trunk_bias: Array1::zeros(self.hidden()),
            heads: BTreeMap::new(),
        };
        for ((b, act), g_logits) in batches.iter().zip(&acts).zip(&total.grads) {
            let head = self.head(b.task)?;
            let g_head = grads.heads.entry(b.task).or_insert_with(|| Head {
                weight: Array2::zeros(head.weight.dim()),
                bias: Array1::zeros(head.bias.len()),
            });
            g_head.weight += &act.hidden.t().dot(g_logits);
            g_head.bias += &g_logits.sum_axis(Axis(0));

            let mut g_pre = g_logits.dot(&head.weight.t());
            g_pre.zip_mut_with(&act.pre, |g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            grads.trunk_bias += &g_pre.sum_axis(Axis(0));
            for (i, x) in b.inputs.iter().enumerate() {
                let g_row = g_pre.row(i);
                for &(j, v) in &x.entries {
                    grads
                        .trunk_rows
                        .entry(j)
                        .or_insert_with(|| Array1::zeros(self.hidden()))
                        .scaled_add(v, &g_row);
                }
            }
        }
        Ok((total, grads))
    }

    /// Plain gradient step. Heads without a gradient entry are untouched.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        for (&j, g) in &grads.trunk_rows {
            self.trunk.row_mut(j as usize).scaled_add(-lr, g);
        }
        self.trunk_bias.scaled_add(-lr, &grads.trunk_bias);
        for (task, g) in &grads.heads {
            let head = self.heads.get_mut(task).expect("gradient for known head");
            head.weight.scaled_add(-lr, &g.weight);
            head.bias.scaled_add(-lr, &g.bias);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.trunk.iter().all(|v| v.is_finite())
            && self.trunk_bias.iter().all(|v| v.is_finite())
            && self
                .heads
                .values()
                .all(|h| h.weight.iter().chain(h.bias.iter()).all(|v| v.is_finite()))
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Moments<D: ndarray::Dimension> {
    m: ndarray::Array<f64, D>,
    v: ndarray::Array<f64, D>,
    t: i32,
}

impl<D: ndarray::Dimension> Moments<D> {
    fn new(shape: D) -> Self {
        Self {
            m: ndarray::Array::zeros(shape.clone()),
            v: ndarray::Array::zeros(shape),
            t: 0,
        }
    }

    fn step(&mut self, param: &mut ndarray::Array<f64, D>, grad: &ndarray::Array<f64, D>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        ndarray::Zip::from(param)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            });
    }
}

/// Adaptive-moment optimizer state. Each head keeps its own step count and
/// is stepped only when its task appears in the batch.
#[derive(Debug, Clone)]
pub struct AdamState {
    trunk: Moments<ndarray::Ix2>,
    trunk_bias: Moments<ndarray::Ix1>,
    heads: BTreeMap<TaskId, (Moments<ndarray::Ix2>, Moments<ndarray::Ix1>)>,
}

impl AdamState {
    pub fn new(model: &ClassifierModel) -> Self {
        Self {
            trunk: Moments::new(model.trunk.raw_dim()),
            trunk_bias: Moments::new(model.trunk_bias.raw_dim()),
            heads: model
                .heads
                .iter()
                .map(|(&t, h)| {
                    (
                        t,
                        (
                            Moments::new(h.weight.raw_dim()),
                            Moments::new(h.bias.raw_dim()),
                        ),
                    )
                })
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut ClassifierModel, grads: &Gradients, lr: f64) {
        let mut dense = Array2::zeros(model.trunk.raw_dim());
        for (&j, g) in &grads.trunk_rows {
            dense.row_mut(j as usize).assign(g);
        }
        self.trunk.step(&mut model.trunk, &dense, lr);
        self.trunk_bias
            .step(&mut model.trunk_bias, &grads.trunk_bias, lr);
        for (task, g) in &grads.heads {
            let head = model.heads.get_mut(task).expect("gradient for known head");
            let (mw, mb) = self.heads.get_mut(task).expect("moments for known head");
            mw.step(&mut head.weight, &g.weight, lr);
            mb.step(&mut head.bias, &g.bias, lr);
        }
    }
}
