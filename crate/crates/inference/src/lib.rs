//! Client for OpenAI-style local chat-completion servers, response label
//! parsing, a scripted mock server and the latency benchmark harness.

pub mod bench;
pub mod client;
pub mod config;
pub mod error;
pub mod mock;
pub mod parse;
pub mod ram;
pub mod wire;

pub use bench::{bench_one, bench_task, BenchCase, BenchMeans, BenchRecord, BenchSummary};
pub use client::{Completion, InferenceClient, TimedCompletion};
pub use config::BackendConfig;
pub use error::InferenceError;
pub use mock::{MockBackend, TokenSchedule};
pub use parse::{parse_label, ParseFailure, ParsedLabel};
