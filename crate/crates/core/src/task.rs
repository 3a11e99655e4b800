//! The three subtasks and their head/metric conventions.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Subtask selector. Task A: single-sentence binary sarcasm detection
/// (English and Arabic). Task B: six-way multi-label classification
/// (English only). Task C: which of a sentence pair is the sarcastic one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TaskA,
    TaskB,
    TaskC,
}

impl TaskKind {
    /// Number of head outputs for the task.
    pub fn class_count(self) -> usize {
        match self {
            TaskKind::TaskA | TaskKind::TaskC => 2,
            TaskKind::TaskB => 6,
        }
    }

    /// Name of the official metric used for checkpoint selection and
    /// reporting: F1 of the sarcastic class (A), macro-F1 over the six
    /// labels (B), accuracy (C).
    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::TaskA => "f1_sarcastic",
            TaskKind::TaskB => "macro_f1",
            TaskKind::TaskC => "accuracy",
        }
    }

    pub fn submission_header(self) -> &'static str {
        match self {
            TaskKind::TaskA => "task_a",
            TaskKind::TaskB => "task_b",
            TaskKind::TaskC => "task_c",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.submission_header())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task_a" | "a" | "A" => Ok(TaskKind::TaskA),
            "task_b" | "b" | "B" => Ok(TaskKind::TaskB),
            "task_c" | "c" | "C" => Ok(TaskKind::TaskC),
            other => Err(crate::error::Error::Config(format!(
                "unknown task '{other}' (expected task_a, task_b, or task_c)"
            ))),
        }
    }
}
