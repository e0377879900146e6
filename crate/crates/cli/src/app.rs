//! Argument parsing and dispatch.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use mhc_core::TaskId;
use mhc_inference::{MockBackend, TokenSchedule};
use serde::Serialize;

use crate::commands::{self, bench_table};
use crate::config::{RunConfig, BACKEND_URL_ENV};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "mhc",
    version,
    about = "Mental-health text classification pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(short, long, value_name = "FILE")]
    pub config: PathBuf,
    /// Override a field, e.g. `--set loss.beta=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratified train/validation/test split of every configured task.
    Split(ConfigArgs),
    /// Train the classifier `runs` times from the persisted splits.
    Train(ConfigArgs),
    /// Score a checkpoint or a backend on the evaluation split.
    Eval(ConfigArgs),
    /// Render prompts, for one text or for the whole evaluation split.
    Prompt {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, requires = "text")]
        task: Option<TaskId>,
        #[arg(long, requires = "task")]
        text: Option<String>,
    },
    /// Latency, throughput and memory against a backend.
    Bench(ConfigArgs),
    /// Comparison tables (and optional charts) over finished runs.
    Report {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        plot: bool,
        #[arg(required = true, value_name = "RUN_DIR")]
        run_dirs: Vec<PathBuf>,
    },
    /// Local chat-completions server with a fixed token schedule.
    ServeMock {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "1")]
        reply: String,
        #[arg(long, default_value_t = 0)]
        first_ms: u64,
        #[arg(long, default_value_t = 0)]
        gap_ms: u64,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn serve_mock(port: u16, reply: &str, first: Duration, gap: Duration) -> Result<()> {
    let tokens: Vec<&str> = reply.split_inclusive(' ').collect();
    let schedule = TokenSchedule::paced(first, gap, &tokens);
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let mock = MockBackend::bind(addr, Arc::new(move |_| schedule.clone()))?;
    println!(
        "mock backend listening on {} (set {BACKEND_URL_ENV}={})",
        mock.url(),
        mock.url()
    );
    loop {
        std::thread::park();
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split(args) => print_json(&commands::cmd_split(&args.load()?)?),
        Command::Train(args) => print_json(&commands::cmd_train(&args.load()?)?),
        Command::Eval(args) => {
            let out = commands::cmd_eval(&args.load()?)?;
            print!("{}", out.report.to_csv());
            Ok(())
        }
        Command::Prompt { config, task, text } => {
            let cfg = config.load()?;
            match (task, text) {
                (Some(task), Some(text)) => {
                    println!("{}", commands::render_one(&cfg, task, &text)?)
                }
                _ => {
                    for path in commands::cmd_prompt(&cfg)? {
                        println!("{}", path.display());
                    }
                }
            }
            Ok(())
        }
        Command::Bench(args) => {
            let out = commands::cmd_bench(&args.load()?)?;
            print!("{}", bench_table(&out.tasks));
            println!("{}", out.note);
            Ok(())
        }
        Command::Report {
            out,
            plot,
            run_dirs,
        } => print_json(&commands::cmd_report(&run_dirs, Path::new(&out), plot)?),
        Command::ServeMock {
            port,
            reply,
            first_ms,
            gap_ms,
        } => serve_mock(
            port,
            &reply,
            Duration::from_millis(first_ms),
            Duration::from_millis(gap_ms),
        ),
    }
}
