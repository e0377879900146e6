//! Zero-shot and few-shot prompt construction.
//!
//! A prompt is a fixed sequence of elements: context, labeled examples
//! (few-shot only), the user post, the task question and a response
//! constraint. Wording lives in versioned template files with the named
//! placeholders `{context}`, `{examples}`, `{post}`, `{question}` and
//! `{constraint}`.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{truncate_text, LabeledExample, TaskDataset, MAX_POST_CHARS};
use crate::task::{TaskId, TaskSpec};

pub const TEMPLATE_VERSION: &str = "v1";
pub const MAX_SHOTS: usize = 4;

const ZERO_SHOT_TEMPLATE: &str = include_str!("../templates/zero_shot.v1.txt");
const FEW_SHOT_TEMPLATE: &str = include_str!("../templates/few_shot.v1.txt");

const ZERO_SHOT_CONTEXT: &str = "The text below was posted by a user on a social media platform. \
Take the role of a psychologist and assess the post for signs of mental health conditions.";

const FEW_SHOT_CONTEXT: &str = "The text below was posted by a user on a social media platform. \
Take the role of a psychologist and assess the post for signs of mental health conditions. \
Labeled example posts are given first to show how posts are categorized.";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("few-shot prompts take 1 to {MAX_SHOTS} examples, got {0}")]
    TooManyShots(usize),
    #[error("few-shot mode needs at least one example; use zero-shot instead")]
    NoShots,
    #[error("expected {expected} examples, got {got}")]
    ShotCountMismatch { expected: usize, got: usize },
    #[error("post text is empty")]
    EmptyPost,
    #[error("asked for {requested} examples but the training split has {available}")]
    InsufficientExamples { requested: usize, available: usize },
    #[error("example belongs to {found}, expected {expected}")]
    WrongTask { expected: TaskId, found: TaskId },
    #[error("template is missing or misorders placeholder `{0}`")]
    BadTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "k")]
pub enum PromptMode {
    ZeroShot,
    FewShot(usize),
}

impl PromptMode {
    pub fn shots(self) -> usize {
        match self {
            PromptMode::ZeroShot => 0,
            PromptMode::FewShot(k) => k,
        }
    }

    fn validate(self) -> Result<(), PromptError> {
        match self {
            PromptMode::ZeroShot => Ok(()),
            PromptMode::FewShot(0) => Err(PromptError::NoShots),
            PromptMode::FewShot(k) if k > MAX_SHOTS => Err(PromptError::TooManyShots(k)),
            PromptMode::FewShot(_) => Ok(()),
        }
    }
}

/// Structural element of a rendered prompt, in rendering order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Element {
    Context,
    Examples,
    UserText,
    Question,
    Constraint,
}

impl Element {
    fn placeholder(self) -> &'static str {
        match self {
            Element::Context => "{context}",
            Element::Examples => "{examples}",
            Element::UserText => "{post}",
            Element::Question => "{question}",
            Element::Constraint => "{constraint}",
        }
    }
}

/// A prompt template: literal text interleaved with element placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pieces: Vec<Piece>,
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Literal(String),
    Slot(Element),
}

impl Template {
    /// Parses `text`, requiring exactly the given elements in that order.
    pub fn parse(text: &str, elements: &[Element]) -> Result<Self, PromptError> {
        let mut pieces = Vec::new();
        let mut rest = text;
        for &el in elements {
            let ph = el.placeholder();
            let at = rest
                .find(ph)
                .ok_or_else(|| PromptError::BadTemplate(ph.to_string()))?;
            if at > 0 {
                pieces.push(Piece::Literal(rest[..at].to_string()));
            }
            pieces.push(Piece::Slot(el));
            rest = &rest[at + ph.len()..];
        }
        for el in [
            Element::Context,
            Element::Examples,
            Element::UserText,
            Element::Question,
            Element::Constraint,
        ] {
            if rest.contains(el.placeholder()) {
                return Err(PromptError::BadTemplate(el.placeholder().to_string()));
            }
        }
        if !rest.is_empty() {
            pieces.push(Piece::Literal(rest.to_string()));
        }
        Ok(Self { pieces })
    }

    pub fn zero_shot() -> Self {
        Self::parse(
            ZERO_SHOT_TEMPLATE,
            &[
                Element::Context,
                Element::UserText,
                Element::Question,
                Element::Constraint,
            ],
        )
        .expect("bundled zero-shot template")
    }

    pub fn few_shot() -> Self {
        Self::parse(
            FEW_SHOT_TEMPLATE,
            &[
                Element::Context,
                Element::Examples,
                Element::UserText,
                Element::Question,
                Element::Constraint,
            ],
        )
        .expect("bundled few-shot template")
    }

    pub fn elements(&self) -> Vec<Element> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(e) => Some(*e),
                Piece::Literal(_) => None,
            })
            .collect()
    }

    /// Substitutes every slot in one pass, so placeholder-like text inside
    /// the values is never expanded.
    pub fn render(&self, values: &BTreeMap<Element, String>) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(e) => out.push_str(values.get(e).map_or("", String::as_str)),
            }
        }
        out
    }
}

/// A fully specified prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptSpec {
    pub task_id: TaskId,
    pub mode: PromptMode,
    pub context_statement: String,
    /// `(text, schema label)` pairs; empty for zero-shot.
    pub examples: Vec<(String, i64)>,
    pub user_text: String,
    pub question: String,
    pub response_constraint: String,
}

fn post_block(text: &str) -> String {
    format!("Post:\n\"\"\"\n{text}\n\"\"\"")
}

fn examples_block(spec: &TaskSpec, examples: &[(String, i64)]) -> String {
    examples
        .iter()
        .enumerate()
        .map(|(i, (text, label))| {
            let name = spec.class_index(*label).map_or("", |c| spec.label_names[c]);
            format!(
                "Example {n}:\n{post}\nLabel: {label} ({name})",
                n = i + 1,
                post = post_block(text)
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Sentence demanding a bare numeric label within the task's range.
pub fn response_constraint(spec: &TaskSpec) -> String {
    let range = spec.valid_labels();
    format!(
        "Respond only with a single numeric label from {} to {}. \
Do not include any other words, explanation or information that is not supported by the post.",
        range.start(),
        range.end()
    )
}

impl PromptSpec {
    pub fn template(&self) -> Template {
        match self.mode {
            PromptMode::ZeroShot => Template::zero_shot(),
            PromptMode::FewShot(_) => Template::few_shot(),
        }
    }

    fn values(&self) -> BTreeMap<Element, String> {
        let mut v = BTreeMap::new();
        v.insert(Element::Context, self.context_statement.clone());
        if !self.examples.is_empty() {
            v.insert(
                Element::Examples,
                examples_block(self.task_id.spec(), &self.examples),
            );
        }
        v.insert(Element::UserText, post_block(&self.user_text));
        v.insert(Element::Question, self.question.clone());
        v.insert(Element::Constraint, self.response_constraint.clone());
        v
    }

    /// Each element's rendered text, in prompt order.
    pub fn elements(&self) -> Vec<(Element, String)> {
        let values = self.values();
        self.template()
            .elements()
            .into_iter()
            .map(|e| (e, values.get(&e).cloned().unwrap_or_default()))
            .collect()
    }

    pub fn render(&self) -> String {
        self.template().render(&self.values())
    }

    /// Recovers the user post from `rendered`, which must be this prompt's
    /// rendering with an arbitrary post substituted.
    pub fn recover_post<'a>(&self, rendered: &'a str) -> Option<&'a str> {
        const MARK: &str = "\u{0}";
        let probe = PromptSpec {
            user_text: MARK.to_string(),
            ..self.clone()
        }
        .render();
        let (prefix, suffix) = probe.split_once(MARK)?;
        rendered.strip_prefix(prefix)?.strip_suffix(suffix)
    }
}

/// Assembles a prompt for `post`. `shots` must hold exactly `mode.shots()`
/// examples of the same task. Post and example texts are cut to
/// [`MAX_POST_CHARS`] characters.
pub fn build_prompt(
    task: TaskId,
    mode: PromptMode,
    post: &str,
    shots: &[LabeledExample],
) -> Result<PromptSpec, PromptError> {
    mode.validate()?;
    if post.trim().is_empty() {
        return Err(PromptError::EmptyPost);
    }
    if shots.len() != mode.shots() {
        return Err(PromptError::ShotCountMismatch {
            expected: mode.shots(),
            got: shots.len(),
        });
    }
    if let Some(ex) = shots.iter().find(|e| e.task_id != task) {
        return Err(PromptError::WrongTask {
            expected: task,
            found: ex.task_id,
        });
    }
    let spec = task.spec();
    let context = match mode {
        PromptMode::ZeroShot => ZERO_SHOT_CONTEXT,
        PromptMode::FewShot(_) => FEW_SHOT_CONTEXT,
    };
    Ok(PromptSpec {
        task_id: task,
        mode,
        context_statement: context.to_string(),
        examples: shots
            .iter()
            .map(|e| (truncate_text(&e.text, MAX_POST_CHARS).to_string(), e.label))
            .collect(),
        user_text: truncate_text(post, MAX_POST_CHARS).to_string(),
        question: spec.question.to_string(),
        response_constraint: response_constraint(spec),
    })
}

/// Class-stratified example selection from a training split.
///
/// Classes are visited round-robin in label order; each visit takes one
/// uniformly drawn, not yet used example of that class. Exhausted classes
/// are skipped.
pub fn select_shots(
    train: &TaskDataset,
    k: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>, PromptError> {
    if k > train.len() || train.is_empty() {
        return Err(PromptError::InsufficientExamples {
            requested: k,
            available: train.len(),
        });
    }
    let classes = train.spec().num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<&LabeledExample>> = vec![Vec::new(); classes];
    for ex in train.examples() {
        pools[ex.class()].push(ex);
    }
    // Per-class draw order: a seeded permutation consumed front to back.
    let orders: Vec<Vec<usize>> = pools
        .iter()
        .map(|p| sample(&mut rng, p.len(), p.len()).into_vec())
        .collect();
    let mut used = vec![0usize; classes];
    let mut picked = Vec::with_capacity(k);
    let mut class = 0;
    while picked.len() < k {
        if used[class] < pools[class].len() {
            picked.push(pools[class][orders[class][used[class]]].clone());
            used[class] += 1;
        }
        class = (class + 1) % classes;
    }
    Ok(picked)
}
