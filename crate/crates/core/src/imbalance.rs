//! Task-level weighted sampling and inverse-frequency class weights.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::TaskId;

#[derive(Debug, Error, PartialEq)]
pub enum ImbalanceError {
    #[error("class {class} has no examples")]
    EmptyClass { class: usize },
    #[error("no classes given")]
    NoClasses,
    #[error("no active tasks")]
    NoTasks,
    #[error("task weight for {task} must be positive and finite, got {weight}")]
    InvalidWeight { task: TaskId, weight: f64 },
    #[error("task {0} has an empty training set")]
    EmptyTrainSet(TaskId),
    #[error("task {0} has no training set")]
    MissingTask(TaskId),
}

/// Per-class loss weights of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, ImbalanceError> {
        if weights.is_empty() {
            return Err(ImbalanceError::NoClasses);
        }
        if let Some(class) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(ImbalanceError::EmptyClass { class });
        }
        Ok(Self(weights))
    }

    /// Inverse-frequency weights `w_c = N / (C * n_c)`.
    ///
    /// Balanced counts give all-ones. A zero count is an error; callers must
    /// drop or merge the class first.
    pub fn inverse_frequency(class_counts: &[usize]) -> Result<Self, ImbalanceError> {
        if class_counts.is_empty() {
            return Err(ImbalanceError::NoClasses);
        }
        if let Some(class) = class_counts.iter().position(|&n| n == 0) {
            return Err(ImbalanceError::EmptyClass { class });
        }
        let total: usize = class_counts.iter().sum();
        let c = class_counts.len() as f64;
        Ok(Self(
            class_counts
                .iter()
                .map(|&n| total as f64 / (c * n as f64))
                .collect(),
        ))
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Sampling weights over the active tasks. Order is the `TaskId` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskWeights(BTreeMap<TaskId, f64>);

impl TaskWeights {
    pub fn new(weights: BTreeMap<TaskId, f64>) -> Result<Self, ImbalanceError> {
        if weights.is_empty() {
            return Err(ImbalanceError::NoTasks);
        }
        for (&task, &weight) in &weights {
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(ImbalanceError::InvalidWeight { task, weight });
            }
        }
        Ok(Self(weights))
    }

    pub fn uniform(tasks: &[TaskId]) -> Result<Self, ImbalanceError> {
        Self::new(tasks.iter().map(|&t| (t, 1.0)).collect())
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        self.0.keys().copied().collect()
    }

    pub fn get(&self, task: TaskId) -> Option<f64> {
        self.0.get(&task).copied()
    }

    /// Weights divided by their sum.
    pub fn normalized(&self) -> BTreeMap<TaskId, f64> {
        let total: f64 = self.0.values().sum();
        self.0.iter().map(|(&t, &w)| (t, w / total)).collect()
    }

    pub fn sampler(&self) -> TaskSampler {
        let tasks = self.tasks();
        let dist = WeightedIndex::new(self.0.values().copied()).expect("validated weights");
        TaskSampler { tasks, dist }
    }
}

/// Draws task ids with probability proportional to their weight.
#[derive(Debug, Clone)]
pub struct TaskSampler {
    tasks: Vec<TaskId>,
    dist: WeightedIndex<f64>,
}

impl TaskSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TaskId {
        if self.tasks.len() == 1 {
            return self.tasks[0];
        }
        self.tasks[self.dist.sample(rng)]
    }
}

/// One draw from `weights`. Convenience over [`TaskWeights::sampler`].
pub fn sample_task<R: Rng + ?Sized>(weights: &TaskWeights, rng: &mut R) -> TaskId {
    weights.sampler().sample(rng)
}

/// Builds a mixed-task batch: each slot draws a task, then a uniform item
/// of that task's training pool, with replacement.
pub fn make_batch<'a, T, R: Rng + ?Sized>(
    train: &'a BTreeMap<TaskId, Vec<T>>,
    weights: &TaskWeights,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<(TaskId, &'a T)>, ImbalanceError> {
    for task in weights.tasks() {
        match train.get(&task) {
            None => return Err(ImbalanceError::MissingTask(task)),
            Some(v) if v.is_empty() => return Err(ImbalanceError::EmptyTrainSet(task)),
            Some(_) => {}
        }
    }
    let sampler = weights.sampler();
    Ok((0..batch_size)
        .map(|_| {
            let task = sampler.sample(rng);
            let pool = &train[&task];
            (task, &pool[rng.random_range(0..pool.len())])
        })
        .collect())
}
