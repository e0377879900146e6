//! Training-loop properties on synthetic data.

use std::collections::BTreeMap;

use mhc_core::loss::LossConfig;
use mhc_core::metrics::{balanced_accuracy, ConfusionMatrix};
use mhc_core::trainer::{
    evaluate_features, train_features, ClassifierModel, FeatureExample, FeatureSplits,
    SparseVector, TaskBatch, TrainConfig,
};
use mhc_core::TaskId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Two isotropic Gaussians in the plane, class 1 drawn with probability
/// `minority`.
fn gaussians(n: usize, minority: f64, rng: &mut ChaCha8Rng) -> Vec<FeatureExample> {
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let class = usize::from(rng.random_bool(minority));
            let centre = if class == 1 { 1.5 } else { 0.0 };
            let x = [centre + noise.sample(rng), noise.sample(rng)];
            FeatureExample {
                input: SparseVector::from_dense(&x),
                class,
            }
        })
        .collect()
}

struct Outcome {
    minority_tpr: f64,
    bacc: f64,
}

fn imbalanced_run(seed: u64, beta: f64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let data: BTreeMap<TaskId, FeatureSplits> = [(
        TaskId::T1,
        FeatureSplits {
            train: gaussians(1000, 0.1, &mut rng),
            validation: gaussians(300, 0.1, &mut rng),
        },
    )]
    .into();
    let test = gaussians(4000, 0.1, &mut rng);
    let cfg = TrainConfig {
        steps: 600,
        batch_size: 64,
        learning_rate: 0.1,
        hidden: 16,
        eval_every: 50,
        seed,
        loss: LossConfig {
            alpha: 10.0,
            beta,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    };
    let (model, _) = train_features(&data, 2, &cfg).unwrap();
    let cm = evaluate_features(&model, TaskId::T1, &test).unwrap();
    Outcome {
        minority_tpr: cm.class_tpr()[1].unwrap(),
        bacc: balanced_accuracy(&cm).unwrap(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn surrogate_lifts_minority_recall() {
    let seeds = 0..5u64;
    let with: Vec<Outcome> = seeds.clone().map(|s| imbalanced_run(s, 1.0)).collect();
    let without: Vec<Outcome> = seeds.map(|s| imbalanced_run(s, 0.0)).collect();
    let tpr1 = median(with.iter().map(|o| o.minority_tpr).collect());
    let tpr0 = median(without.iter().map(|o| o.minority_tpr).collect());
    let bacc1 = median(with.iter().map(|o| o.bacc).collect());
    let bacc0 = median(without.iter().map(|o| o.bacc).collect());
    eprintln!("minority tpr {tpr0:.4} -> {tpr1:.4}, bacc {bacc0:.4} -> {bacc1:.4}");
    assert!(tpr1 >= tpr0 + 0.05);
    assert!(bacc1 >= bacc0);
}

#[test]
fn a_small_step_lowers_the_batch_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..20 {
        let ex = gaussians(16, 0.3, &mut rng);
        let mut model = ClassifierModel::new(2, 8, &[TaskId::T1], &mut rng);
        // Break the zero head so the trunk receives gradient as well.
        model
            .heads
            .get_mut(&TaskId::T1)
            .unwrap()
            .weight
            .mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let batch = TaskBatch {
            task: TaskId::T1,
            inputs: ex.iter().map(|e| &e.input).collect(),
            labels: ex.iter().map(|e| e.class).collect(),
        };
        let cfg = LossConfig {
            beta: 1.0,
            ..LossConfig::default()
        };
        let (before, grads) = model
            .loss_and_gradients(std::slice::from_ref(&batch), &cfg)
            .unwrap();
        model.apply_sgd(&grads, 1e-3);
        let (after, _) = model
            .loss_and_gradients(std::slice::from_ref(&batch), &cfg)
            .unwrap();
        assert!(
            after.value < before.value,
            "trial {trial}: {} -> {}",
            before.value,
            after.value
        );
    }
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: BTreeMap<TaskId, FeatureSplits> = [(
        TaskId::T1,
        FeatureSplits {
            train: gaussians(200, 0.5, &mut rng),
            validation: gaussians(50, 0.5, &mut rng),
        },
    )]
    .into();
    let cfg = TrainConfig {
        steps: 50,
        hidden: 8,
        eval_every: 10,
        ..TrainConfig::default()
    };
    let a = train_features(&data, 2, &cfg).unwrap();
    let b = train_features(&data, 2, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn separable_data_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let far = |n, rng: &mut ChaCha8Rng| -> Vec<FeatureExample> {
        (0..n)
            .map(|i| {
                let class = i % 2;
                let sign = if class == 1 { 1.0 } else { -1.0 };
                FeatureExample {
                    input: SparseVector::from_dense(&[
                        sign * 3.0 + rng.random_range(-0.5..0.5),
                        1.0,
                    ]),
                    class,
                }
            })
            .collect()
    };
    let train = far(100, &mut rng);
    let data: BTreeMap<TaskId, FeatureSplits> = [(
        TaskId::T1,
        FeatureSplits {
            train: train.clone(),
            validation: far(20, &mut rng),
        },
    )]
    .into();
    let cfg = TrainConfig {
        steps: 300,
        learning_rate: 0.1,
        hidden: 8,
        eval_every: 50,
        ..TrainConfig::default()
    };
    let (model, trace) = train_features(&data, 2, &cfg).unwrap();
    let cm: ConfusionMatrix = evaluate_features(&model, TaskId::T1, &train).unwrap();
    assert_eq!(mhc_core::metrics::accuracy(&cm).unwrap(), 1.0);
    assert_eq!(trace.evals_at(300).next().unwrap().accuracy, 1.0);
    assert_eq!(trace.final_train().next().unwrap().accuracy, 1.0);
}
