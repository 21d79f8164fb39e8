//! Calibration sets and their JSONL form.
//!
//! One example per line: `{"id": str, "tokens": [int], <gold>}` where the
//! gold field is exactly one of `"label": str` (single classification),
//! `"labels": [str]` (set prediction) or `"references": [[str]]` (caption
//! references, one token list per reference). All lines in a file must use
//! the same gold field.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Caption, Label, LabelSet, MetricError, ReferenceSet};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}: expected exactly one gold field (label / labels / references)")]
    GoldFieldCount { line: usize },
    #[error("line {line}: gold field kind differs from earlier lines")]
    MixedTasks { line: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("example {example}: empty token sequence")]
    EmptyTokens { example: usize },
}

/// The task a calibration set carries gold data for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Single,
    Multi,
    Caption,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Multi => "multi",
            Self::Caption => "caption",
        }
    }
}

/// Input token ids for one example. Non-empty; upper bounds (vocabulary,
/// maximum length) are checked by the model that consumes the sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Option<Self> {
        if ids.is_empty() {
            return None;
        }
        Some(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }
}

/// Gold data for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Label(Label),
    Labels(LabelSet),
    References(ReferenceSet),
}

impl Gold {
    pub fn task(&self) -> TaskKind {
        match self {
            Self::Label(_) => TaskKind::Single,
            Self::Labels(_) => TaskKind::Multi,
            Self::References(_) => TaskKind::Caption,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalExample {
    pub id: String,
    pub tokens: TokenSequence,
    pub gold: Gold,
}

/// A list of examples with a single task kind.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    task: TaskKind,
    examples: Vec<CalExample>,
}

impl CalibrationSet {
    pub fn new(examples: Vec<CalExample>) -> Result<Self, DatasetError> {
        let task = examples.first().ok_or(DatasetError::Empty)?.gold.task();
        for (i, example) in examples.iter().enumerate() {
            if example.gold.task() != task {
                return Err(DatasetError::MixedTasks { line: i + 1 });
            }
        }
        Ok(Self { task, examples })
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[CalExample] {
        &self.examples
    }

    pub fn load_jsonl(reader: impl BufRead) -> Result<Self, DatasetError> {
        let mut examples = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| DatasetError::Line {
                line: line_no,
                message: e.to_string(),
            })?;
            examples.push(row.into_example(line_no)?);
        }
        Self::new(examples)
    }

    pub fn save_jsonl(&self, mut writer: impl Write) -> Result<(), DatasetError> {
        for example in &self.examples {
            let row = Row::from_example(example);
            let line = serde_json::to_string(&row).expect("row serializes");
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    id: String,
    tokens: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    references: Option<Vec<Vec<String>>>,
}

impl Row {
    fn into_example(self, line: usize) -> Result<CalExample, DatasetError> {
        let golds_present =
            self.label.is_some() as u8 + self.labels.is_some() as u8 + self.references.is_some() as u8;
        if golds_present != 1 {
            return Err(DatasetError::GoldFieldCount { line });
        }
        let map_metric = |e: MetricError| DatasetError::Line {
            line,
            message: e.to_string(),
        };
        let gold = if let Some(label) = self.label {
            Gold::Label(Label::new(label).map_err(map_metric)?)
        } else if let Some(labels) = self.labels {
            let labels = labels
                .into_iter()
                .map(Label::new)
                .collect::<Result<Vec<_>, _>>()
                .map_err(map_metric)?;
            Gold::Labels(LabelSet::new(labels))
        } else {
            let references = self
                .references
                .expect("one gold field present")
                .into_iter()
                .map(Caption::from_tokens)
                .collect::<Result<Vec<_>, _>>()
                .map_err(map_metric)?;
            Gold::References(ReferenceSet::new(references).map_err(map_metric)?)
        };
        let tokens =
            TokenSequence::new(self.tokens).ok_or(DatasetError::EmptyTokens { example: line })?;
        Ok(CalExample {
            id: self.id,
            tokens,
            gold,
        })
    }

    fn from_example(example: &CalExample) -> Self {
        let mut row = Row {
            id: example.id.clone(),
            tokens: example.tokens.ids().to_vec(),
            label: None,
            labels: None,
            references: None,
        };
        match &example.gold {
            Gold::Label(label) => row.label = Some(label.as_str().to_string()),
            Gold::Labels(set) => {
                row.labels = Some(set.iter().map(|l| l.as_str().to_string()).collect())
            }
            Gold::References(refs) => {
                row.references = Some(
                    refs.references()
                        .iter()
                        .map(|c| c.tokens().to_vec())
                        .collect(),
                )
            }
        }
        row
    }
}
