//! Latency and throughput of single requests and of task-level runs.

use std::time::Instant;

use mhc_core::metrics::{ConfusionMatrix, MetricsError, TaskMetrics};
use mhc_core::TaskId;
use serde::{Deserialize, Serialize};

use crate::client::InferenceClient;
use crate::config::whitespace_tokens;
use crate::error::InferenceError;
use crate::parse::{parse_label, ParseFailure};
use crate::ram::{RamPoller, POLL_INTERVAL};

const BYTES_PER_GB: f64 = 1e9;

/// Timing of one streamed request. Times in seconds, rates in tokens per
/// second, memory in decimal gigabytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    /// Send to first content token.
    pub ttft: f64,
    /// `prompt_tokens / ttft`.
    pub itps: f64,
    /// `(output_tokens - 1) / oet`, 0 for fewer than two tokens.
    pub otps: f64,
    /// First to last content token.
    pub oet: f64,
    /// Send to last content token.
    pub total_time: f64,
    pub peak_ram_gb: f64,
    pub ram_observed: bool,
    pub prompt_tokens: u64,
    /// True when `prompt_tokens` is a whitespace estimate because the
    /// server reported no usage.
    pub prompt_tokens_approximate: bool,
    pub output_tokens: u64,
    pub quantization: Option<String>,
    pub response: String,
}

impl BenchRecord {
    /// Derives the metrics from raw timestamps. Without any content token
    /// the end of the stream stands in for both token times.
    fn from_timestamps(
        sent: Instant,
        first: Instant,
        last: Instant,
        prompt_tokens: u64,
        output_tokens: u64,
    ) -> Self {
        let ttft = first.duration_since(sent).as_secs_f64();
        let oet = last.duration_since(first).as_secs_f64();
        Self {
            ttft,
            itps: if ttft > 0.0 {
                prompt_tokens as f64 / ttft
            } else {
                0.0
            },
            otps: if output_tokens >= 2 && oet > 0.0 {
                (output_tokens - 1) as f64 / oet
            } else {
                0.0
            },
            oet,
            total_time: last.duration_since(sent).as_secs_f64(),
            peak_ram_gb: 0.0,
            ram_observed: false,
            prompt_tokens,
            prompt_tokens_approximate: false,
            output_tokens,
            quantization: None,
            response: String::new(),
        }
    }
}

/// Benchmarks one streamed completion of `prompt`.
pub async fn bench_one(
    client: &InferenceClient,
    prompt: &str,
) -> Result<BenchRecord, InferenceError> {
    let cfg = client.config();
    let poller = RamPoller::start(cfg.backend_pid, POLL_INTERVAL);
    let timed = client.complete_streaming(prompt).await;
    let ram = poller.stop();
    let timed = timed?;

    let usage = timed.completion.usage;
    let prompt_tokens = usage.map_or(whitespace_tokens(prompt) as u64, |u| u.prompt_tokens);
    let output_tokens = usage.map_or(timed.content_chunks as u64, |u| u.completion_tokens);
    let first = timed.first_token.unwrap_or(timed.finished);
    let last = timed.last_token.unwrap_or(first);
    let mut record =
        BenchRecord::from_timestamps(timed.sent, first, last, prompt_tokens, output_tokens);
    record.prompt_tokens_approximate = usage.is_none();
    record.peak_ram_gb = ram.peak_bytes as f64 / BYTES_PER_GB;
    record.ram_observed = ram.observed;
    record.quantization = cfg.quantization.clone();
    record.response = timed.completion.text;
    Ok(record)
}

/// A rendered prompt with the schema label it should receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub prompt: String,
    pub gold: i64,
}

/// Field-wise means over the successful records of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchMeans {
    pub ttft: f64,
    pub itps: f64,
    pub otps: f64,
    pub oet: f64,
    pub total_time: f64,
    pub peak_ram_gb: f64,
    pub prompt_tokens: f64,
    pub output_tokens: f64,
}

impl BenchMeans {
    pub fn of(records: &[BenchRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: fn(&BenchRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        Self {
            ttft: mean(|r| r.ttft),
            itps: mean(|r| r.itps),
            otps: mean(|r| r.otps),
            oet: mean(|r| r.oet),
            total_time: mean(|r| r.total_time),
            peak_ram_gb: mean(|r| r.peak_ram_gb),
            prompt_tokens: mean(|r| r.prompt_tokens as f64),
            output_tokens: mean(|r| r.output_tokens as f64),
        }
    }
}

/// A request that produced no record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub task: TaskId,
    pub requested: usize,
    pub records: Vec<BenchRecord>,
    pub failures: Vec<BenchFailure>,
    /// Parse outcome of each record, aligned with `records`.
    pub labels: Vec<Result<i64, ParseFailure>>,
    pub mean: BenchMeans,
    /// Label metrics over the records; parse failures count as wrong.
    pub metrics: TaskMetrics,
    pub ram_observed: bool,
}

/// Benchmarks the first `n` cases one after another and scores the
/// parsed labels. Requests that fail are reported and skipped; the run
/// fails only if every request does.
pub async fn bench_task(
    client: &InferenceClient,
    task: TaskId,
    cases: &[BenchCase],
    n: usize,
) -> Result<BenchSummary, InferenceError> {
    if n == 0 || n > cases.len() {
        return Err(InferenceError::InvalidSampleCount {
            requested: n,
            available: cases.len(),
        });
    }
    let spec = task.spec();
    let mut records = Vec::new();
    let mut labels = Vec::new();
    let mut failures = Vec::new();
    let mut cm = ConfusionMatrix::new(spec.num_classes());
    let mut unparsed = vec![0u64; spec.num_classes()];
    for (index, case) in cases[..n].iter().enumerate() {
        let gold = spec.class_index(case.gold).ok_or_else(|| {
            InferenceError::InvalidConfig(format!("gold label {} invalid for {task}", case.gold))
        })?;
        match bench_one(client, &case.prompt).await {
            Ok(record) => {
                let label = parse_label(&record.response, spec);
                match label {
                    Ok(l) => cm
                        .record(
                            gold,
                            spec.class_index(l).expect("parsed labels are in range"),
                        )
                        .expect("classes in range"),
                    Err(_) => unparsed[gold] += 1,
                }
                labels.push(label);
                records.push(record);
            }
            Err(e) => {
                log::warn!("{task} case {index}: {e}");
                failures.push(BenchFailure {
                    index,
                    error: e.to_string(),
                });
            }
        }
    }
    if records.is_empty() {
        return Err(InferenceError::AllFailed {
            n,
            first: failures[0].error.clone(),
        });
    }
    let metrics = TaskMetrics::from_confusion(task, cm, &unparsed)
        .map_err(|e: MetricsError| InferenceError::MalformedResponse(e.to_string()))?;
    Ok(BenchSummary {
        task,
        requested: n,
        mean: BenchMeans::of(&records),
        ram_observed: records.iter().all(|r| r.ram_observed),
        records,
        failures,
        labels,
        metrics,
    })
}
