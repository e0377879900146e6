//! The six classification tasks and their label schemas.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
#[error("unknown task id `{0}` (expected T1..T6)")]
pub struct TaskParseError(pub String);

/// Identifier of one of the six mental-health classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskId {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
}

/// Public corpus a task is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceDataset {
    Dreaddit,
    DepSeverity,
    Sdcnl,
    Cssrs,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::T1,
        TaskId::T2,
        TaskId::T3,
        TaskId::T4,
        TaskId::T5,
        TaskId::T6,
    ];

    pub fn spec(self) -> &'static TaskSpec {
        &TASKS[self.index()]
    }

    /// Zero-based position in [`TaskId::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Column heading used in tabular reports ("Task 1" .. "Task 6").
    pub fn column_name(self) -> String {
        format!("Task {}", self.index() + 1)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.index() + 1)
    }
}

impl FromStr for TaskId {
    type Err = TaskParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let digits = t
            .strip_prefix('T')
            .or_else(|| t.strip_prefix('t'))
            .unwrap_or(t);
        match digits {
            "1" => Ok(TaskId::T1),
            "2" => Ok(TaskId::T2),
            "3" => Ok(TaskId::T3),
            "4" => Ok(TaskId::T4),
            "5" => Ok(TaskId::T5),
            "6" => Ok(TaskId::T6),
            _ => Err(TaskParseError(s.to_string())),
        }
    }
}

/// Static description of a task's label schema and prompt question.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub name: &'static str,
    pub label_names: &'static [&'static str],
    /// Smallest valid numeric label (1 for T6, 0 otherwise).
    pub label_base: i64,
    /// Task question shown to a language model. Replaceable wording.
    pub question: &'static str,
    pub source: SourceDataset,
}

impl TaskSpec {
    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn valid_labels(&self) -> std::ops::RangeInclusive<i64> {
        self.label_base..=self.label_base + self.num_classes() as i64 - 1
    }

    pub fn is_valid_label(&self, label: i64) -> bool {
        self.valid_labels().contains(&label)
    }

    /// Maps a schema label to a zero-based class index.
    pub fn class_index(&self, label: i64) -> Option<usize> {
        self.is_valid_label(label)
            .then(|| (label - self.label_base) as usize)
    }

    /// Maps a zero-based class index back to the schema label.
    pub fn label_of(&self, class: usize) -> i64 {
        debug_assert!(class < self.num_classes());
        self.label_base + class as i64
    }
}

static TASKS: [TaskSpec; 6] = [
    TaskSpec {
        id: TaskId::T1,
        name: "stress detection",
        label_names: &["Not stressed", "Stressed"],
        label_base: 0,
        question: "Does the poster of this text show signs of stress? \
                   Answer 0 for not stressed or 1 for stressed.",
        source: SourceDataset::Dreaddit,
    },
    TaskSpec {
        id: TaskId::T2,
        name: "depression detection",
        label_names: &["No depression", "Depression"],
        label_base: 0,
        question: "Does the poster of this text show signs of depression? \
                   Answer 0 for no depression or 1 for depression.",
        source: SourceDataset::DepSeverity,
    },
    TaskSpec {
        id: TaskId::T3,
        name: "depression severity",
        label_names: &["Minimal", "Mild", "Moderate", "Severe"],
        label_base: 0,
        question: "How severe is the depression expressed by the poster of this text? \
                   Answer 0 for minimal, 1 for mild, 2 for moderate or 3 for severe.",
        source: SourceDataset::DepSeverity,
    },
    TaskSpec {
        id: TaskId::T4,
        name: "suicidal ideation detection",
        label_names: &["No suicidal ideation", "Suicidal ideation"],
        label_base: 0,
        question: "Does the poster of this text express suicidal ideation? \
                   Answer 0 for no suicidal ideation or 1 for suicidal ideation.",
        source: SourceDataset::Sdcnl,
    },
    TaskSpec {
        id: TaskId::T5,
        name: "suicide risk detection",
        label_names: &["No indicator of suicide risk", "Indicator of suicide risk"],
        label_base: 0,
        question: "Does the poster of this text show any indicator of suicide risk? \
                   Answer 0 for no indicator or 1 for an indicator of suicide risk.",
        source: SourceDataset::Cssrs,
    },
    TaskSpec {
        id: TaskId::T6,
        name: "suicide risk level",
        label_names: &["Supportive", "Indicator", "Ideation", "Behavior", "Attempt"],
        label_base: 1,
        question: "What level of suicide risk does the poster of this text show? \
                   Answer 1 for supportive, 2 for indicator, 3 for ideation, \
                   4 for behavior or 5 for attempt.",
        source: SourceDataset::Cssrs,
    },
];
