use std::fmt::Write as _;
use std::path::PathBuf;

use mhc_inference::{bench_task, BenchCase, BenchSummary, InferenceClient};
use serde::Serialize;

use super::{load_splits, prompts_for, runtime, BENCH_DIR};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{write_json, write_text, Manifest};

pub const BENCH_JSON: &str = "bench.json";
pub const BENCH_CSV: &str = "bench.csv";

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutput {
    pub dir: PathBuf,
    /// Timings depend on the host and the backend; they are not portable.
    pub note: &'static str,
    pub itps_definition: &'static str,
    pub otps_definition: &'static str,
    pub model: String,
    pub quantization: Option<String>,
    pub tasks: Vec<BenchSummary>,
}

/// Per-task table: mean latencies and rates, RAM, accuracy.
pub fn bench_table(tasks: &[BenchSummary]) -> String {
    let mut out = String::from(
        "Task,TTFT (s),ITPS (t/s),OTPS (t/s),OET (s),Total Time (s),RAM (GB),ACC,Requests,Failed requests,Parse failures,RAM observed\n",
    );
    for s in tasks {
        let m = &s.mean;
        writeln!(
            out,
            "{},{:.3},{:.1},{:.1},{:.3},{:.3},{:.2},{:.3},{},{},{},{}",
            s.task.column_name(),
            m.ttft,
            m.itps,
            m.otps,
            m.oet,
            m.total_time,
            m.peak_ram_gb,
            s.metrics.accuracy.mean,
            s.requested,
            s.failures.len(),
            s.metrics.parse_failures,
            s.ram_observed
        )
        .unwrap();
    }
    out
}

/// Sends the first `bench.n` test prompts of each task one at a time and
/// records latency, throughput, memory and accuracy.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchOutput> {
    let n = cfg.bench.n;
    if n == 0 {
        return Err(CliError::Usage("bench.n must be at least 1".into()));
    }
    let splits = load_splits(cfg)?;
    let client = InferenceClient::new(cfg.backend.clone())?;
    let rt = runtime()?;
    let mut tasks = Vec::new();
    for &task in &cfg.tasks {
        let bundle = &splits[&task];
        let examples = bundle.test.examples();
        if n > examples.len() {
            return Err(CliError::Usage(format!(
                "bench.n = {n} exceeds the {} test examples of {task}",
                examples.len()
            )));
        }
        let examples = &examples[..n];
        let cases: Vec<BenchCase> = prompts_for(cfg, task, bundle, examples, 0)?
            .into_iter()
            .zip(examples)
            .map(|(prompt, ex)| BenchCase {
                prompt,
                gold: ex.label,
            })
            .collect();
        tasks.push(rt.block_on(bench_task(&client, task, &cases, n))?);
    }
    let dir = cfg.run_dir().join(BENCH_DIR);
    let out = BenchOutput {
        dir: dir.clone(),
        note: "timings are environment-specific",
        itps_definition: "prompt_tokens / TTFT",
        otps_definition: "(output_tokens - 1) / OET",
        model: cfg.backend.model.clone(),
        quantization: cfg.backend.quantization.clone(),
        tasks,
    };
    write_json(&dir.join(BENCH_JSON), &out)?;
    write_text(&dir.join(BENCH_CSV), &bench_table(&out.tasks))?;
    Manifest::new("bench", Some(cfg), &dir).write(&dir)?;
    Ok(out)
}
