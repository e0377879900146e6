//! Statistical checks of weighted task sampling.

use std::collections::BTreeMap;

use mhc_core::imbalance::{make_batch, TaskWeights};
use mhc_core::TaskId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const DRAWS: usize = 30_000;

fn counts(weights: (f64, f64), seed: u64) -> [f64; 2] {
    let w = TaskWeights::new([(TaskId::T1, weights.0), (TaskId::T2, weights.1)].into()).unwrap();
    let sampler = w.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = [0.0; 2];
    for _ in 0..DRAWS {
        c[usize::from(sampler.sample(&mut rng) == TaskId::T2)] += 1.0;
    }
    c
}

#[test]
fn two_to_one_frequency() {
    let c = counts((2.0, 1.0), 0);
    let freq = c[0] / DRAWS as f64;
    assert!((freq - 0.6667).abs() <= 0.01, "{freq}");
}

#[test]
fn goodness_of_fit() {
    let c = counts((2.0, 1.0), 1);
    let expected = [DRAWS as f64 * 2.0 / 3.0, DRAWS as f64 / 3.0];
    let stat: f64 = c
        .iter()
        .zip(&expected)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum();
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(stat);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn scaling_the_weights_changes_nothing() {
    // 2x2 homogeneity test between independent draws at (2,1) and (20,10).
    let a = counts((2.0, 1.0), 2);
    let b = counts((20.0, 10.0), 3);
    let total = 2.0 * DRAWS as f64;
    let mut stat = 0.0;
    for col in 0..2 {
        let col_sum = a[col] + b[col];
        for row in [&a, &b] {
            let e = DRAWS as f64 * col_sum / total;
            stat += (row[col] - e).powi(2) / e;
        }
    }
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(stat);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn batches_only_draw_from_weighted_tasks() {
    let pools: BTreeMap<TaskId, Vec<u32>> = [
        (TaskId::T1, (0..10).collect()),
        (TaskId::T4, (100..105).collect()),
        (TaskId::T6, vec![7]),
    ]
    .into();
    let w = TaskWeights::new([(TaskId::T1, 1.0), (TaskId::T4, 3.0)].into()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = make_batch(&pools, &w, 500, &mut rng).unwrap();
    assert_eq!(batch.len(), 500);
    for (task, item) in batch {
        assert!(pools[&task].contains(item));
        assert_ne!(task, TaskId::T6);
    }
}
