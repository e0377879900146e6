//! Fixtures shared by the CLI test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mhc_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Word marking a positive post; never appears in instructions.
pub const POSITIVE_MARK: &str = "zzpos";
pub const NEGATIVE_MARK: &str = "zzneg";

const FILLER: [&str; 12] = [
    "today", "work", "sleep", "friends", "weekend", "coffee", "exam", "family", "rain", "music",
    "walk", "dinner",
];

/// Binary stress-style CSV: `n` rows, every `minority_every`-th row
/// positive. Each text carries a class marker plus seeded filler words, so
/// the classes are linearly separable.
pub fn write_binary_csv(path: &Path, n: usize, minority_every: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("text,label\n");
    for i in 0..n {
        let positive = i % minority_every == 0;
        let mark = if positive {
            POSITIVE_MARK
        } else {
            NEGATIVE_MARK
        };
        let filler: Vec<&str> = (0..4)
            .map(|_| FILLER[rng.random_range(0..FILLER.len())])
            .collect();
        let label = if positive { "stress" } else { "not stress" };
        out.push_str(&format!("{mark} {} {i},{label}\n", filler.join(" ")));
    }
    std::fs::write(path, out).unwrap();
}

/// Small, fast config for task T1 reading `csv` and writing under `out`.
pub fn base_config(csv: &Path, out: &Path) -> Value {
    json!({
        "run_id": "t",
        "out_dir": out,
        "tasks": ["T1"],
        "data": { "T1": { "path": csv } },
        "split": { "seed": 3 },
        "train": {
            "steps": 200,
            "batch_size": 16,
            "learning_rate": 0.1,
            "hidden": 8,
            "eval_every": 50,
            "feature_dim": 256
        },
        "runs": 1
    })
}

pub fn write_config(dir: &Path, name: &str, tree: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(tree).unwrap()).unwrap();
    path
}

pub fn load(tree: &Value, overrides: &[&str]) -> RunConfig {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::from_tree(&mut tree.clone(), &overrides, None).unwrap()
}

/// `(acc, bacc)` of the validation point at `step` in a trace CSV.
pub fn trace_validation(trace_csv: &str, step: usize, task: &str) -> (f64, f64) {
    trace_csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0] == step.to_string() && f[1] == "validation" && f[2] == task)
        .map(|f| (f[4].parse().unwrap(), f[5].parse().unwrap()))
        .expect("validation row")
}

/// `acc` of the final train-split evaluation in a trace CSV.
pub fn trace_final_train(trace_csv: &str, task: &str) -> f64 {
    trace_csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[1] == "train" && f[2] == task)
        .map(|f| f[4].parse().unwrap())
        .expect("train row")
}

/// All files below `dir` with their bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}
