//! Declarative run configuration, overrides and hashing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mhc_core::corpus::{CsvOptions, LabelMap, DEFAULT_RATIOS};
use mhc_core::imbalance::ClassWeights;
use mhc_core::loss::{LossConfig, TrainRecipe};
use mhc_core::promptkit::PromptMode;
use mhc_core::trainer::{Featurizer, LrSchedule, OptimizerKind, TrainConfig};
use mhc_core::TaskId;
use mhc_inference::BackendConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable that replaces `backend.base_url`.
pub const BACKEND_URL_ENV: &str = "MHC_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    #[serde(default = "default_text_column")]
    pub text_column: String,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    /// JSON object from raw label strings to schema labels. The built-in
    /// map of the task's source dataset when absent.
    #[serde(default)]
    pub label_map: Option<PathBuf>,
}

fn default_text_column() -> String {
    "text".into()
}
fn default_label_column() -> String {
    "label".into()
}

impl DataSource {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            text_column: self.text_column.clone(),
            label_column: self.label_column.clone(),
        }
    }

    pub fn label_map(&self, task: TaskId) -> Result<LabelMap> {
        match &self.label_map {
            Some(p) => Ok(LabelMap::load(p)?),
            None => Ok(LabelMap::default_for(task)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSettings {
    #[serde(default = "default_ratios")]
    pub ratios: (f64, f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn default_ratios() -> (f64, f64, f64) {
    DEFAULT_RATIOS
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS,
            seed: 0,
        }
    }
}

fn default_alpha() -> f64 {
    LossConfig::default().alpha
}
fn default_beta() -> f64 {
    LossConfig::default().beta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSettings {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub gamma: BTreeMap<TaskId, Vec<f64>>,
    #[serde(default)]
    pub lambda: BTreeMap<TaskId, f64>,
    /// Weight cross-entropy by inverse class frequency of the train split.
    #[serde(default)]
    pub class_weights: bool,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            gamma: BTreeMap::new(),
            lambda: BTreeMap::new(),
            class_weights: false,
        }
    }
}

impl LossSettings {
    /// Loss configuration; `train_counts` supplies per-class counts when
    /// class weighting is on.
    pub fn resolve(&self, train_counts: &BTreeMap<TaskId, Vec<usize>>) -> Result<LossConfig> {
        let mut class_weights = BTreeMap::new();
        if self.class_weights {
            for (&task, counts) in train_counts {
                let w = ClassWeights::inverse_frequency(counts)
                    .map_err(|e| CliError::Data(format!("{task} class weights: {e}")))?;
                class_weights.insert(task, w);
            }
        }
        Ok(LossConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma.clone(),
            lambda: self.lambda.clone(),
            class_weights,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_schedule")]
    pub schedule: LrSchedule,
    #[serde(default = "d_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    /// Seed of the first run; run `i` uses `seed + i`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub task_weights: Option<BTreeMap<TaskId, f64>>,
    #[serde(default = "d_feature_dim")]
    pub feature_dim: usize,
    #[serde(default)]
    pub feature_seed: u64,
    /// Adapter settings of the reference fine-tuning setup, stored with
    /// each checkpoint as metadata.
    #[serde(default)]
    pub recipe: TrainRecipe,
}

fn d_steps() -> usize {
    TrainConfig::default().steps
}
fn d_batch() -> usize {
    TrainConfig::default().batch_size
}
fn d_lr() -> f64 {
    TrainConfig::default().learning_rate
}
fn d_schedule() -> LrSchedule {
    TrainConfig::default().schedule
}
fn d_optimizer() -> OptimizerKind {
    TrainConfig::default().optimizer
}
fn d_hidden() -> usize {
    TrainConfig::default().hidden
}
fn d_eval_every() -> usize {
    TrainConfig::default().eval_every
}
fn d_feature_dim() -> usize {
    Featurizer::default().dim
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: d_steps(),
            batch_size: d_batch(),
            learning_rate: d_lr(),
            schedule: d_schedule(),
            optimizer: d_optimizer(),
            hidden: d_hidden(),
            eval_every: d_eval_every(),
            seed: 0,
            task_weights: None,
            feature_dim: d_feature_dim(),
            feature_seed: 0,
            recipe: TrainRecipe::default(),
        }
    }
}

impl TrainSettings {
    pub fn featurizer(&self) -> Featurizer {
        Featurizer::new(self.feature_dim, self.feature_seed)
    }

    pub fn train_config(&self, loss: LossConfig, run: usize) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            schedule: self.schedule,
            optimizer: self.optimizer,
            hidden: self.hidden,
            eval_every: self.eval_every,
            seed: self.seed + run as u64,
            loss,
            task_weights: self.task_weights.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSettings {
    #[serde(default = "d_mode")]
    pub mode: PromptMode,
    /// Seed of few-shot example selection; run `i` uses `shot_seed + i`.
    #[serde(default)]
    pub shot_seed: u64,
}

fn d_mode() -> PromptMode {
    PromptMode::ZeroShot
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self {
            mode: PromptMode::ZeroShot,
            shot_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSource {
    Checkpoint,
    Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplitName {
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "d_source")]
    pub source: EvalSource,
    #[serde(default = "d_split")]
    pub split: EvalSplitName,
    /// Concurrent backend requests.
    #[serde(default = "d_workers")]
    pub workers: usize,
    /// Evaluate at most this many examples per task.
    #[serde(default)]
    pub limit: Option<usize>,
}

fn d_source() -> EvalSource {
    EvalSource::Checkpoint
}
fn d_split() -> EvalSplitName {
    EvalSplitName::Test
}
fn d_workers() -> usize {
    4
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            source: d_source(),
            split: d_split(),
            workers: d_workers(),
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    /// Requests per task.
    #[serde(default = "d_bench_n")]
    pub n: usize,
}

fn d_bench_n() -> usize {
    10
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self { n: d_bench_n() }
    }
}

fn d_runs() -> usize {
    5
}
fn d_out_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn d_run_id() -> String {
    "default".into()
}

/// Everything a command needs. Loaded from JSON; absent fields take their
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_run_id")]
    pub run_id: String,
    /// Parent of the run directory. Not part of the config hash.
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
    pub tasks: Vec<TaskId>,
    #[serde(default)]
    pub data: BTreeMap<TaskId, DataSource>,
    #[serde(default)]
    pub split: SplitSettings,
    #[serde(default)]
    pub loss: LossSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub prompt: PromptSettings,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub bench: BenchSettings,
    /// Repetitions with consecutive seeds.
    #[serde(default = "d_runs")]
    pub runs: usize,
}

/// Sets `path` (dot separated) in a JSON tree, creating objects on the way.
/// The value is parsed as JSON and taken as a plain string if that fails.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(CliError::Usage(format!("empty key segment in `{key}`")));
        }
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("`{key}`: `{part}` is not inside an object"))
        })?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

impl RunConfig {
    /// Reads `path`, then applies the backend URL from the environment and
    /// the `key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut tree: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_tree(&mut tree, overrides, std::env::var(BACKEND_URL_ENV).ok())
    }

    pub fn from_tree(
        tree: &mut Value,
        overrides: &[String],
        backend_url: Option<String>,
    ) -> Result<Self> {
        if let Some(url) = backend_url {
            apply_override(tree, &format!("backend.base_url={}", Value::String(url)))?;
        }
        for o in overrides {
            apply_override(tree, o)?;
        }
        let cfg: Self =
            serde_json::from_value(tree.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks. File existence is checked by the commands that
    /// read the files.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.tasks.is_empty() {
            return bad("tasks must not be empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t) {
                return bad(format!("task {t} listed twice"));
            }
        }
        if self.run_id.is_empty()
            || self.run_id.contains(['/', '\\'])
            || self.run_id.starts_with('.')
        {
            return bad(format!(
                "run_id `{}` is not a plain directory name",
                self.run_id
            ));
        }
        if self.train.feature_dim == 0 {
            return bad("train.feature_dim must be positive".into());
        }
        if self.eval.workers == 0 {
            return bad("eval.workers must be at least 1".into());
        }
        self.loss
            .resolve(&BTreeMap::new())?
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.backend
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Checks that every task has a data source whose files exist.
    pub fn validate_inputs(&self) -> Result<()> {
        for t in &self.tasks {
            let src = self
                .data
                .get(t)
                .ok_or_else(|| CliError::Config(format!("no data source for {t}")))?;
            for p in std::iter::once(&src.path).chain(&src.label_map) {
                if !p.is_file() {
                    return Err(CliError::Data(format!("{}: file not found", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }

    /// SHA-256 over the canonical JSON of the config without `out_dir`.
    pub fn hash(&self) -> String {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        tree.as_object_mut().expect("object").remove("out_dir");
        hex::encode(Sha256::digest(tree.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({"tasks": ["T1"]})
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::from_tree(&mut minimal(), &[], None).unwrap();
        assert_eq!(cfg.runs, 5);
        assert_eq!(cfg.split.ratios, DEFAULT_RATIOS);
        assert_eq!(cfg.loss.alpha, 10.0);
        assert_eq!(cfg.backend.context_limit, 4096);
        assert_eq!(cfg.prompt.mode, PromptMode::ZeroShot);
    }

    #[test]
    fn overrides_and_env() {
        let cfg = RunConfig::from_tree(
            &mut minimal(),
            &[
                "loss.beta=0".into(),
                "train.steps=7".into(),
                "run_id=beta0".into(),
                r#"prompt.mode={"mode":"few_shot","k":2}"#.into(),
                "tasks=[\"T2\",\"T6\"]".into(),
            ],
            Some("http://10.0.0.1:9000".into()),
        )
        .unwrap();
        assert_eq!(cfg.loss.beta, 0.0);
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.run_id, "beta0");
        assert_eq!(cfg.prompt.mode, PromptMode::FewShot(2));
        assert_eq!(cfg.tasks, vec![TaskId::T2, TaskId::T6]);
        assert_eq!(cfg.backend.base_url, "http://10.0.0.1:9000");

        // An explicit override beats the environment.
        let cfg = RunConfig::from_tree(
            &mut minimal(),
            &["backend.base_url=http://h:1".into()],
            Some("http://e:2".into()),
        )
        .unwrap();
        assert_eq!(cfg.backend.base_url, "http://h:1");
    }

    #[test]
    fn rejects_bad_configs() {
        let err = |overrides: &[&str]| {
            let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
            RunConfig::from_tree(&mut minimal(), &o, None).unwrap_err()
        };
        assert!(matches!(err(&["runs=0"]), CliError::Config(_)));
        assert!(matches!(err(&["tasks=[]"]), CliError::Config(_)));
        assert!(matches!(err(&["loss.alpha=-1"]), CliError::Config(_)));
        assert!(matches!(err(&["trian.steps=3"]), CliError::Config(_)));
        assert!(matches!(err(&["run_id=../x"]), CliError::Config(_)));
        assert!(matches!(err(&["novalue"]), CliError::Usage(_)));
        assert!(matches!(err(&["runs.x=1"]), CliError::Config(_)));
    }

    #[test]
    fn hash_ignores_output_location_only() {
        let a = RunConfig::from_tree(&mut minimal(), &[], None).unwrap();
        let b = RunConfig::from_tree(&mut minimal(), &["out_dir=/elsewhere".into()], None).unwrap();
        let c = RunConfig::from_tree(&mut minimal(), &["loss.beta=0".into()], None).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
