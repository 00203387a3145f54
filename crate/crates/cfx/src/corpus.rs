//! Datasets, tasks and splits.
//!
//! Two task shapes are supported: single-text classification (sentiment,
//! hate speech) and premise/hypothesis inference. Instances live in
//! line-delimited JSON files, one record per line:
//!
//! - single text: `{"id": str, "text": str, "label": str}`
//! - pair text:   `{"id": str, "premise": str, "hypothesis": str, "label": str}`
//!
//! Files are UTF-8 with LF line endings. Text is stored exactly as read,
//! with no Unicode normalization; consumers that need a normalized view
//! (metrics, the copy-paste detector) normalize on their side.

use crate::generation::CounterfactualRecord;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}:{line}: malformed record: {source}")]
    MalformedLine {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}:{line}: unknown label {label:?} (expected one of {expected:?})")]
    UnknownLabel {
        path: String,
        line: usize,
        label: String,
        expected: Vec<String>,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: missing field {field:?} for {kind} task")]
    MissingField {
        path: String,
        line: usize,
        field: &'static str,
        kind: TaskKind,
    },
    #[error("{path}:{line}: empty required field {field:?}")]
    EmptyField {
        path: String,
        line: usize,
        field: &'static str,
    },
    #[error("task must have at least 2 distinct labels, got {0:?}")]
    BadLabelSet(Vec<String>),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Which text shape a task works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleText,
    PairText,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::SingleText => write!(f, "single_text"),
            TaskKind::PairText => write!(f, "pair_text"),
        }
    }
}

/// The editable side of a premise/hypothesis pair. Exactly one side is
/// edited per generation request, never both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditedField {
    Premise,
    Hypothesis,
}

impl EditedField {
    pub fn other(self) -> EditedField {
        match self {
            EditedField::Premise => EditedField::Hypothesis,
            EditedField::Hypothesis => EditedField::Premise,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EditedField::Premise => "premise",
            EditedField::Hypothesis => "hypothesis",
        }
    }
}

impl fmt::Display for EditedField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A task definition: the text shape plus the ordered label set.
///
/// Label order matters: ties in classifier scores and "first label" rules
/// resolve in this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    pub labels: Vec<String>,
}

impl Task {
    pub fn new(kind: TaskKind, labels: Vec<String>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        if labels.len() < 2 || !labels.iter().all(|l| seen.insert(l.clone())) {
            return Err(CorpusError::BadLabelSet(labels));
        }
        Ok(Task { kind, labels })
    }

    /// The canonical three-label inference task.
    pub fn nli() -> Self {
        Task {
            kind: TaskKind::PairText,
            labels: vec![
                "entailment".to_string(),
                "neutral".to_string(),
                "contradiction".to_string(),
            ],
        }
    }

    /// Binary sentiment task.
    pub fn sentiment() -> Self {
        Task {
            kind: TaskKind::SingleText,
            labels: vec!["negative".to_string(), "positive".to_string()],
        }
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    /// Case-insensitive lookup returning the canonical label name.
    pub fn match_label(&self, raw: &str) -> Option<&str> {
        let folded = raw.trim().to_lowercase();
        self.labels
            .iter()
            .find(|l| l.to_lowercase() == folded)
            .map(String::as_str)
    }
}

/// Instance payload for either task shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceText {
    Single { text: String },
    Pair { premise: String, hypothesis: String },
}

/// An original labeled record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactualInstance {
    pub id: String,
    #[serde(flatten)]
    pub content: InstanceText,
    pub label: String,
}

impl FactualInstance {
    pub fn single(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        FactualInstance {
            id: id.into(),
            content: InstanceText::Single { text: text.into() },
            label: label.into(),
        }
    }

    pub fn pair(
        id: impl Into<String>,
        premise: impl Into<String>,
        hypothesis: impl Into<String>,
        label: impl Into<String>,
    ) -> Self {
        FactualInstance {
            id: id.into(),
            content: InstanceText::Pair {
                premise: premise.into(),
                hypothesis: hypothesis.into(),
            },
            label: label.into(),
        }
    }

    /// The single text, if this is a single-text instance.
    pub fn text(&self) -> Option<&str> {
        match &self.content {
            InstanceText::Single { text } => Some(text),
            InstanceText::Pair { .. } => None,
        }
    }

    /// One side of a pair instance.
    pub fn field(&self, field: EditedField) -> Option<&str> {
        match (&self.content, field) {
            (InstanceText::Pair { premise, .. }, EditedField::Premise) => Some(premise),
            (InstanceText::Pair { hypothesis, .. }, EditedField::Hypothesis) => Some(hypothesis),
            _ => None,
        }
    }

    /// The text an edit targets: the whole text for single-text tasks, the
    /// named side for pair tasks.
    pub fn editable_text(&self, field: Option<EditedField>) -> Option<&str> {
        match (&self.content, field) {
            (InstanceText::Single { text }, None) => Some(text),
            (InstanceText::Pair { .. }, Some(f)) => self.field(f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitName::Train => write!(f, "train"),
            SplitName::Validation => write!(f, "validation"),
            SplitName::Test => write!(f, "test"),
        }
    }
}

/// One split of a dataset. Immutable after loading and safe to share.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub instances: Vec<FactualInstance>,
}

impl DatasetSplit {
    pub fn get(&self, id: &str) -> Option<&FactualInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

// On-disk record. Field order here is the wire order.
#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    premise: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hypothesis: Option<String>,
    label: String,
}

impl RawRecord {
    fn from_instance(inst: &FactualInstance) -> Self {
        match &inst.content {
            InstanceText::Single { text } => RawRecord {
                id: inst.id.clone(),
                text: Some(text.clone()),
                premise: None,
                hypothesis: None,
                label: inst.label.clone(),
            },
            InstanceText::Pair {
                premise,
                hypothesis,
            } => RawRecord {
                id: inst.id.clone(),
                text: None,
                premise: Some(premise.clone()),
                hypothesis: Some(hypothesis.clone()),
                label: inst.label.clone(),
            },
        }
    }
}

/// Load and validate one split. Fails atomically: any bad line aborts the
/// whole load with the offending line number.
pub fn load_dataset(path: &Path, task: &Task, name: SplitName) -> Result<DatasetSplit, CorpusError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut instances = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
                path: display.clone(),
                line: line_no,
                source,
            })?;
        let instance = validate_record(raw, task, &display, line_no)?;
        if !seen_ids.insert(instance.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: display.clone(),
                line: line_no,
                id: instance.id,
            });
        }
        instances.push(instance);
    }
    Ok(DatasetSplit { name, instances })
}

fn validate_record(
    raw: RawRecord,
    task: &Task,
    path: &str,
    line: usize,
) -> Result<FactualInstance, CorpusError> {
    if !task.has_label(&raw.label) {
        return Err(CorpusError::UnknownLabel {
            path: path.to_string(),
            line,
            label: raw.label,
            expected: task.labels.clone(),
        });
    }
    let require = |value: Option<String>, field: &'static str| -> Result<String, CorpusError> {
        let value = value.ok_or(CorpusError::MissingField {
            path: path.to_string(),
            line,
            field,
            kind: task.kind,
        })?;
        if value.is_empty() {
            return Err(CorpusError::EmptyField {
                path: path.to_string(),
                line,
                field,
            });
        }
        Ok(value)
    };
    let content = match task.kind {
        TaskKind::SingleText => InstanceText::Single {
            text: require(raw.text, "text")?,
        },
        TaskKind::PairText => InstanceText::Pair {
            premise: require(raw.premise, "premise")?,
            hypothesis: require(raw.hypothesis, "hypothesis")?,
        },
    };
    Ok(FactualInstance {
        id: raw.id,
        content,
        label: raw.label,
    })
}

/// Serialize a split back to the wire format, one record per line.
pub fn write_dataset<W: Write>(split: &DatasetSplit, out: &mut W) -> std::io::Result<()> {
    for inst in &split.instances {
        let raw = RawRecord::from_instance(inst);
        let line = serde_json::to_string(&raw).expect("record serialization cannot fail");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset_file(split: &DatasetSplit, path: &Path) -> Result<(), CorpusError> {
    let mut file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_dataset(split, &mut file).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A counterfactual that fails a referential or label check. Violations are
/// data, not failures: callers decide what to do with them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairingViolation {
    /// References a factual id absent from the split.
    UnknownFactual { cf_id: String, factual_id: String },
    /// Target label outside the task label set.
    LabelNotInSet { cf_id: String, label: String },
    /// Target label equals the factual label, so nothing would flip.
    NonFlipTarget { cf_id: String, label: String },
}

impl fmt::Display for PairingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairingViolation::UnknownFactual { cf_id, factual_id } => {
                write!(f, "{cf_id}: references unknown factual id {factual_id:?}")
            }
            PairingViolation::LabelNotInSet { cf_id, label } => {
                write!(f, "{cf_id}: target label {label:?} not in task label set")
            }
            PairingViolation::NonFlipTarget { cf_id, label } => {
                write!(f, "{cf_id}: target label {label:?} equals the factual label")
            }
        }
    }
}

/// Check every counterfactual against the factual split: the referenced id
/// must exist and the target label must be in the label set and differ from
/// the factual label.
pub fn validate_pairing(
    factuals: &DatasetSplit,
    cfs: &[CounterfactualRecord],
    task: &Task,
) -> Vec<PairingViolation> {
    let mut violations = Vec::new();
    for cf in cfs {
        let factual = match factuals.get(&cf.factual_id) {
            Some(f) => f,
            None => {
                violations.push(PairingViolation::UnknownFactual {
                    cf_id: cf.cf_id.clone(),
                    factual_id: cf.factual_id.clone(),
                });
                continue;
            }
        };
        if !task.has_label(&cf.target_label) {
            violations.push(PairingViolation::LabelNotInSet {
                cf_id: cf.cf_id.clone(),
                label: cf.target_label.clone(),
            });
        } else if cf.target_label == factual.label {
            violations.push(PairingViolation::NonFlipTarget {
                cf_id: cf.cf_id.clone(),
                label: cf.target_label.clone(),
            });
        }
    }
    violations
}

/// Ids that appear in more than one split of the same dataset.
pub fn duplicate_ids_across(splits: &[&DatasetSplit]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups = Vec::new();
    for split in splits {
        for inst in &split.instances {
            if !seen.insert(inst.id.clone()) && !dups.contains(&inst.id) {
                dups.push(inst.id.clone());
            }
        }
    }
    dups
}
