use std::path::PathBuf;

use mhc_core::promptkit::{build_prompt, select_shots, PromptMode};
use mhc_core::TaskId;
use serde::Serialize;

use super::{eval_examples, load_splits, prompts_for, PROMPTS_DIR};
use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::{write_text, Manifest};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptLine {
    pub prompt: String,
    pub gold: i64,
}

/// Prompt for a single post. Few-shot examples come from the persisted
/// training split.
pub fn render_one(cfg: &RunConfig, task: TaskId, text: &str) -> Result<String> {
    let shots = match cfg.prompt.mode {
        PromptMode::ZeroShot => Vec::new(),
        PromptMode::FewShot(k) => {
            let splits = load_splits(cfg)?;
            select_shots(&splits[&task].train, k, cfg.prompt.shot_seed)?
        }
    };
    Ok(build_prompt(task, cfg.prompt.mode, text, &shots)?.render())
}

/// Writes `prompts/{task}.jsonl` with the prompt and gold label of every
/// evaluation example.
pub fn cmd_prompt(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let splits = load_splits(cfg)?;
    let dir = cfg.run_dir().join(PROMPTS_DIR);
    let mut written = Vec::new();
    for &task in &cfg.tasks {
        let bundle = &splits[&task];
        let examples = eval_examples(cfg, bundle);
        let prompts = prompts_for(cfg, task, bundle, examples, 0)?;
        let mut text = String::new();
        for (p, ex) in prompts.into_iter().zip(examples) {
            let line = PromptLine {
                prompt: p,
                gold: ex.label,
            };
            text.push_str(&serde_json::to_string(&line).expect("serializable"));
            text.push('\n');
        }
        written.push(write_text(&dir.join(format!("{task}.jsonl")), &text)?);
    }
    Manifest::new("prompt", Some(cfg), &written).write(&dir)?;
    Ok(written)
}
