//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use mhc_cli::commands::{cmd_eval, cmd_split, cmd_train, runtime, REPORT_JSON};
use mhc_core::corpus::{stratified_split, LabeledExample, TaskDataset, DEFAULT_RATIOS};
use mhc_core::imbalance::TaskWeights;
use mhc_core::loss::{
    bacc_loss, ce_loss, finite_diff_check, margins, LogitBatch, LossConfig, LossKind,
};
use mhc_core::metrics::{accuracy, balanced_accuracy, ConfusionMatrix};
use mhc_core::promptkit::{build_prompt, select_shots, Element, PromptMode, MAX_SHOTS};
use mhc_core::trainer::{
    evaluate_features, train_features, FeatureExample, FeatureSplits, SparseVector, TrainConfig,
};
use mhc_core::TaskId;
use mhc_inference::{bench_one, BackendConfig, InferenceClient, MockBackend, TokenSchedule};
use ndarray::{array, Array2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn cfg(alpha: f64, beta: f64) -> LossConfig {
    LossConfig {
        alpha,
        beta,
        ..LossConfig::default()
    }
}

fn random_batch(rng: &mut ChaCha8Rng, task: TaskId, n: usize) -> LogitBatch {
    let c = task.spec().num_classes();
    let z = Array2::from_shape_simple_fn((n, c), || rng.sample::<f64, _>(StandardNormal));
    let y = (0..n).map(|_| rng.random_range(0..c)).collect();
    LogitBatch::new(task, z, y).unwrap()
}

fn within_time(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:.2?}, limit {limit:?}");
    Ok(took)
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let task = *[TaskId::T1, TaskId::T3, TaskId::T6]
            .choose(&mut rng)
            .unwrap();
        let alpha = *[1.0, 5.0, 10.0].choose(&mut rng).unwrap();
        let beta = *[0.0, 0.5, 1.0].choose(&mut rng).unwrap();
        let n = rng.random_range(1..=8);
        let batches = [random_batch(&mut rng, task, n)];
        let c = cfg(alpha, beta);
        let errs = [
            finite_diff_check(LossKind::CrossEntropy, &batches, &c, 1e-5),
            finite_diff_check(LossKind::Bacc, &batches, &c, 1e-3),
            finite_diff_check(LossKind::Total, &batches, &c, 1e-3),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e.map_err(|e| e.to_string())?);
        }
    }
    ensure!(
        worst.iter().all(|&e| e < 1e-4),
        "max relative error ce/bacc/total = {worst:?}"
    );
    let took = within_time(start, Duration::from_secs(10))?;
    Ok(format!(
        "max rel err ce {:.1e}, bacc {:.1e}, total {:.1e}; {took:.2?}",
        worst[0], worst[1], worst[2]
    ))
}

fn hard_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 100 {
        let n = rng.random_range(2..=8);
        let b = random_batch(&mut rng, TaskId::T1, n);
        let m = margins(b.logits()).unwrap();
        let both_present = b.labels().contains(&0) && b.labels().contains(&1);
        if !both_present || m.iter().any(|v| v.abs() <= 0.01) {
            continue;
        }
        let soft = bacc_loss(&b, &cfg(1e4, 1.0))
            .map_err(|e| e.to_string())?
            .value;
        let mut cm = ConfusionMatrix::new(2);
        for (i, &y) in b.labels().iter().enumerate() {
            let pred = usize::from(b.logits()[[i, 1]] > b.logits()[[i, 0]]);
            cm.record(y, pred).unwrap();
        }
        let hard = balanced_accuracy(&cm).unwrap();
        worst = worst.max((soft - (1.0 - hard)).abs());
        checked += 1;
    }
    ensure!(worst < 1e-3, "max deviation {worst:.2e}");
    Ok(format!(
        "max |soft - (1 - hard)| = {worst:.1e} over 100 batches"
    ))
}

fn spot_values() -> Outcome {
    let equal =
        LogitBatch::new(TaskId::T1, Array2::from_elem((4, 2), 0.7), vec![0, 1, 1, 0]).unwrap();
    let a = bacc_loss(&equal, &cfg(10.0, 1.0)).unwrap().value;
    ensure!((a - 0.5).abs() < 1e-6, "equal logits: {a}");
    let two = LogitBatch::new(TaskId::T1, array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1]).unwrap();
    let b = bacc_loss(&two, &cfg(1.0, 1.0)).unwrap().value;
    let expected = 1.0 - 1.0 / (1.0 + (-1.0f64).exp());
    ensure!(
        (b - expected).abs() < 1e-6 && (b - 0.2689).abs() < 1e-4,
        "(1,0)/(0,1): {b}"
    );
    let uniform = LogitBatch::new(TaskId::T1, array![[0.0, 0.0]], vec![1]).unwrap();
    let c = ce_loss(&uniform, None).unwrap().value;
    ensure!((c - std::f64::consts::LN_2).abs() < 1e-6, "uniform ce: {c}");
    Ok(format!("bacc {a}, bacc {b:.6}, ce {c:.6}"))
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut checked = 0usize;
    for classes in [2usize, 3] {
        let cells = classes * classes;
        for code in 0..4usize.pow(cells as u32) {
            let counts: Vec<u64> = (0..cells).map(|i| ((code >> (2 * i)) & 3) as u64).collect();
            let mut pairs = Vec::new();
            for (cell, &n) in counts.iter().enumerate() {
                pairs.extend(std::iter::repeat_n(
                    (cell / classes, cell % classes),
                    n as usize,
                ));
            }
            let cm =
                ConfusionMatrix::from_rows(counts.chunks(classes).map(<[u64]>::to_vec).collect());
            if pairs.is_empty() {
                ensure!(
                    accuracy(&cm).is_err() && balanced_accuracy(&cm).is_err(),
                    "empty matrix accepted"
                );
                continue;
            }
            let hits = pairs.iter().filter(|(t, p)| t == p).count();
            let acc = hits as f64 / pairs.len() as f64;
            let recalls: Vec<f64> = (0..classes)
                .filter_map(|c| {
                    let members: Vec<_> = pairs.iter().filter(|(t, _)| *t == c).collect();
                    (!members.is_empty()).then(|| {
                        members.iter().filter(|(_, p)| *p == c).count() as f64
                            / members.len() as f64
                    })
                })
                .collect();
            let bacc = recalls.iter().sum::<f64>() / recalls.len() as f64;
            let got = (accuracy(&cm).unwrap(), balanced_accuracy(&cm).unwrap());
            ensure!(
                (got.0 - acc).abs() < 1e-12 && (got.1 - bacc).abs() < 1e-12,
                "{counts:?}: got {got:?}, expected ({acc}, {bacc})"
            );
            checked += 1;
        }
    }
    let took = within_time(start, Duration::from_secs(5))?;
    Ok(format!("{checked} matrices; {took:.2?}"))
}

fn gaussians(n: usize, minority: f64, rng: &mut ChaCha8Rng) -> Vec<FeatureExample> {
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let class = usize::from(rng.random_bool(minority));
            let centre = if class == 1 { 1.5 } else { 0.0 };
            FeatureExample {
                input: SparseVector::from_dense(&[centre + noise.sample(rng), noise.sample(rng)]),
                class,
            }
        })
        .collect()
}

fn imbalanced_run(seed: u64, beta: f64) -> (f64, f64) {
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
    let tc = TrainConfig {
        steps: 600,
        batch_size: 64,
        learning_rate: 0.1,
        hidden: 16,
        eval_every: 50,
        seed,
        loss: cfg(10.0, beta),
        ..TrainConfig::default()
    };
    let (model, _) = train_features(&data, 2, &tc).unwrap();
    let cm = evaluate_features(&model, TaskId::T1, &test).unwrap();
    (cm.class_tpr()[1].unwrap(), balanced_accuracy(&cm).unwrap())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn imbalance_efficacy() -> Outcome {
    let start = Instant::now();
    let with: Vec<(f64, f64)> = (0..5).map(|s| imbalanced_run(s, 1.0)).collect();
    let without: Vec<(f64, f64)> = (0..5).map(|s| imbalanced_run(s, 0.0)).collect();
    let tpr1 = median(with.iter().map(|o| o.0).collect());
    let tpr0 = median(without.iter().map(|o| o.0).collect());
    let bacc1 = median(with.iter().map(|o| o.1).collect());
    let bacc0 = median(without.iter().map(|o| o.1).collect());
    let summary = format!("minority TPR {tpr0:.4} -> {tpr1:.4}, BACC {bacc0:.4} -> {bacc1:.4}");
    ensure!(tpr1 >= tpr0 + 0.05, "{summary}");
    ensure!(bacc1 >= bacc0, "{summary}");
    let took = within_time(start, Duration::from_secs(60))?;
    Ok(format!("{summary}; {took:.2?}"))
}

const DRAWS: usize = 30_000;

fn draw_counts(weights: (f64, f64), seed: u64) -> [f64; 2] {
    let w = TaskWeights::new([(TaskId::T1, weights.0), (TaskId::T2, weights.1)].into()).unwrap();
    let sampler = w.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = [0.0; 2];
    for _ in 0..DRAWS {
        c[usize::from(sampler.sample(&mut rng) == TaskId::T2)] += 1.0;
    }
    c
}

fn sampler() -> Outcome {
    let a = draw_counts((2.0, 1.0), 0);
    let freq = a[0] / DRAWS as f64;
    ensure!((freq - 0.6667).abs() <= 0.01, "task-1 frequency {freq}");
    // Homogeneity of (2,1) and (20,10) draws: scaling the weights must not
    // change the distribution.
    let b = draw_counts((20.0, 10.0), 1);
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
    ensure!(p > 0.001, "chi-square p = {p}");
    Ok(format!("frequency {freq:.4}, chi-square p = {p:.3}"))
}

fn dataset(task: TaskId, per_class: &[usize]) -> TaskDataset {
    let spec = task.spec();
    let mut examples = Vec::new();
    for (class, &n) in per_class.iter().enumerate() {
        for i in 0..n {
            examples.push(
                LabeledExample::new(task, format!("doc {class}-{i}"), spec.label_of(class))
                    .unwrap(),
            );
        }
    }
    TaskDataset::new(task, examples).unwrap()
}

fn stratified() -> Outcome {
    let b = stratified_split(&dataset(TaskId::T1, &[60, 40]), DEFAULT_RATIOS, 7)
        .map_err(|e| e.to_string())?;
    let per_class: Vec<[usize; 2]> = b
        .parts()
        .iter()
        .map(|d| [d.class_counts()[0], d.class_counts()[1]])
        .collect();
    ensure!(
        per_class == vec![[43, 29], [5, 3], [12, 8]],
        "per class {per_class:?}"
    );
    let sizes = b.parts().map(|d| d.len());
    ensure!(sizes == [72, 8, 20], "totals {sizes:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..50 {
        let task = *TaskId::ALL.choose(&mut rng).unwrap();
        let counts: Vec<usize> = (0..task.spec().num_classes())
            .map(|_| rng.random_range(2..40))
            .collect();
        let seed = rng.random();
        let ds = dataset(task, &counts);
        let split = stratified_split(&ds, DEFAULT_RATIOS, seed).unwrap();
        ensure!(
            split == stratified_split(&ds, DEFAULT_RATIOS, seed).unwrap(),
            "case {case}: not deterministic"
        );
        let mut seen = BTreeSet::new();
        for part in split.parts() {
            for ex in part.examples() {
                ensure!(
                    seen.insert(ex.text.clone()),
                    "case {case}: {} in two parts",
                    ex.text
                );
            }
        }
        ensure!(
            seen.len() == ds.len(),
            "case {case}: {} of {} examples placed",
            seen.len(),
            ds.len()
        );
    }
    Ok(
        "43/5/12 and 29/3/8, totals 72/8/20; 50 random datasets disjoint, complete, deterministic"
            .into(),
    )
}

const POST: &str = "Finals are next week and I keep waking up at 4am with my heart racing.";

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/golden")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn prompt_structure() -> Outcome {
    let shot = |task, text: &str, label| LabeledExample::new(task, text, label).unwrap();
    let zero = build_prompt(TaskId::T1, PromptMode::ZeroShot, POST, &[]).unwrap();
    ensure!(
        zero.render() == golden("zero_shot_t1.txt"),
        "zero-shot golden differs"
    );
    let kinds: Vec<Element> = zero.elements().into_iter().map(|(e, _)| e).collect();
    ensure!(
        kinds
            == [
                Element::Context,
                Element::UserText,
                Element::Question,
                Element::Constraint
            ],
        "zero-shot order {kinds:?}"
    );
    let shots = [
        shot(
            TaskId::T3,
            "Had a rough day but talked it through with a friend.",
            0,
        ),
        shot(
            TaskId::T3,
            "Nothing feels worth doing anymore and I can't get out of bed.",
            2,
        ),
    ];
    let few = build_prompt(TaskId::T3, PromptMode::FewShot(2), POST, &shots).unwrap();
    ensure!(
        few.render() == golden("few_shot_t3_k2.txt"),
        "few-shot golden differs"
    );
    let kinds: Vec<Element> = few.elements().into_iter().map(|(e, _)| e).collect();
    ensure!(
        kinds
            == [
                Element::Context,
                Element::Examples,
                Element::UserText,
                Element::Question,
                Element::Constraint
            ],
        "few-shot order {kinds:?}"
    );

    for task in TaskId::ALL {
        let spec = task.spec();
        let train = TaskDataset::new(
            task,
            (0..spec.num_classes())
                .flat_map(|c| (0..6).map(move |i| (c, i)))
                .map(|(c, i)| shot(task, &format!("training post {c}/{i}"), spec.label_of(c)))
                .collect(),
        )
        .unwrap();
        for k in 1..=MAX_SHOTS {
            let shots = select_shots(&train, k, 11).unwrap();
            let rendered = build_prompt(task, PromptMode::FewShot(k), POST, &shots)
                .unwrap()
                .render();
            ensure!(
                rendered.matches("Label:").count() == k,
                "{task} k={k}: shot count"
            );
            let tail = &rendered[rendered.find(POST).unwrap()..];
            ensure!(
                !tail.contains("Label:"),
                "{task} k={k}: label after the post"
            );
        }
        // Two gold labels, one prompt.
        let a = build_prompt(task, PromptMode::ZeroShot, POST, &[])
            .unwrap()
            .render();
        let gold = shot(task, POST, spec.label_of(spec.num_classes() - 1));
        let b = build_prompt(gold.task_id, PromptMode::ZeroShot, &gold.text, &[])
            .unwrap()
            .render();
        ensure!(
            a == b && !a.contains("Label:"),
            "{task}: prompt depends on the gold label"
        );
    }
    Ok(format!(
        "goldens match, element order holds, k = 1..{MAX_SHOTS}, no gold label"
    ))
}

fn timing() -> Outcome {
    let start = Instant::now();
    let ms = Duration::from_millis;
    let mut tokens = vec!["1"];
    tokens.extend(["."; 9]);
    let mock =
        MockBackend::start(TokenSchedule::paced(ms(120), ms(50), &tokens).with_prompt_tokens(240))
            .map_err(|e| e.to_string())?;
    let client =
        InferenceClient::new(BackendConfig::with_url(mock.url())).map_err(|e| e.to_string())?;
    let rt = runtime().map_err(|e| e.to_string())?;
    let mut worst = [0.0f64; 4];
    for rep in 0..50 {
        let r = rt
            .block_on(bench_one(&client, "x"))
            .map_err(|e| format!("rep {rep}: {e}"))?;
        let dev = [
            (r.ttft - 0.120).abs(),
            (r.otps - 20.0).abs() / 20.0,
            (r.itps - 2000.0).abs() / 2000.0,
            (r.total_time - (r.ttft + r.oet)).abs(),
        ];
        for (w, d) in worst.iter_mut().zip(dev) {
            *w = w.max(d);
        }
        ensure!(dev[0] <= 0.015, "rep {rep}: TTFT {:.4} s", r.ttft);
        ensure!(dev[1] <= 0.05, "rep {rep}: OTPS {:.3}", r.otps);
        ensure!(dev[2] <= 0.15, "rep {rep}: ITPS {:.1}", r.itps);
        ensure!(
            dev[3] <= 1e-3,
            "rep {rep}: total {} vs {} + {}",
            r.total_time,
            r.ttft,
            r.oet
        );
    }
    let took = within_time(start, Duration::from_secs(120))?;
    Ok(format!(
        "worst over 50 reps: TTFT {:.1} ms off, OTPS {:.2}%, ITPS {:.2}%, total-sum {:.1e} s; {took:.2?}",
        worst[0] * 1e3,
        worst[1] * 100.0,
        worst[2] * 100.0,
        worst[3]
    ))
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let csv = tmp.path().join("data.csv");
    common::write_binary_csv(&csv, 90, 4, 17);
    let mut reports = Vec::new();
    for out in ["first", "second"] {
        let tree = common::base_config(&csv, &tmp.path().join(out));
        let cfg = common::load(&tree, &["runs=2"]);
        cmd_split(&cfg).map_err(|e| e.to_string())?;
        cmd_train(&cfg).map_err(|e| e.to_string())?;
        let eval = cmd_eval(&cfg).map_err(|e| e.to_string())?;
        reports.push(std::fs::read(eval.dir.join(REPORT_JSON)).map_err(|e| e.to_string())?);
    }
    ensure!(reports[0] == reports[1], "report.json differs between runs");
    Ok(format!(
        "report.json identical ({} bytes)",
        reports[0].len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("binary hard-metric limit", hard_limit),
        ("closed-form spot values", spot_values),
        ("metric oracle", metric_oracle),
        ("imbalance efficacy", imbalance_efficacy),
        ("task sampler", sampler),
        ("stratified split", stratified),
        ("prompt structure", prompt_structure),
        ("timing harness", timing),
        ("end-to-end reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
