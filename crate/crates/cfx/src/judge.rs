//! Model-as-judge protocol.
//!
//! A judge model scores counterfactuals on up to three aspects, each on a
//! 1..4 scale where 1 or 2 means disagreement with the shown label and 3
//! or 4 means agreement: FL (does the counterfactual represent the shown
//! label), UA (is it free of unnecessary alterations) and RS (is it
//! realistic). Reliability is probed by showing the judge either the true
//! target label (the honest set) or a deliberately wrong one (the
//! corrupted set) and comparing score distributions. A separate
//! classification mode asks the judge to pick the label outright.

use crate::corpus::{EditedField, FactualInstance, InstanceText, Task};
use crate::generation::CounterfactualRecord;
use crate::providers::ChatClient;
use crate::util::fnv1a_64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("factual label equals target label; nothing to corrupt")]
    FactualEqualsTarget,
    #[error("label {0:?} is not in the task label set")]
    UnknownLabel(String),
    #[error("counterfactual {0} has not parsed ok; judge it after filtering")]
    UnparsedCf(String),
    #[error("no parsed judge records for aspect {0}")]
    EmptyDistribution(&'static str),
    #[error("cannot average distributions of different aspects")]
    AspectMismatch,
    #[error("copy-paste detection needs a pair-task record with a counterpart")]
    NotAPairRecord,
    #[error("record file {path}:{line}: {message}")]
    BadRecordFile {
        path: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// The three judged aspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aspect {
    #[serde(rename = "FL")]
    FlipLabel,
    #[serde(rename = "UA")]
    UnnecessaryAlterations,
    #[serde(rename = "RS")]
    Realisticness,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [
        Aspect::FlipLabel,
        Aspect::UnnecessaryAlterations,
        Aspect::Realisticness,
    ];

    pub fn marker(self) -> &'static str {
        match self {
            Aspect::FlipLabel => "FL:",
            Aspect::UnnecessaryAlterations => "UA:",
            Aspect::Realisticness => "RS:",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Aspect::FlipLabel => "FL",
            Aspect::UnnecessaryAlterations => "UA",
            Aspect::Realisticness => "RS",
        }
    }

    pub fn parse(s: &str) -> Option<Aspect> {
        match s.trim().to_uppercase().as_str() {
            "FL" => Some(Aspect::FlipLabel),
            "UA" => Some(Aspect::UnnecessaryAlterations),
            "RS" => Some(Aspect::Realisticness),
            _ => None,
        }
    }
}

/// Scores for the requested aspects, each in 1..=4.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScore {
    #[serde(rename = "FL", default, skip_serializing_if = "Option::is_none")]
    pub fl: Option<u8>,
    #[serde(rename = "UA", default, skip_serializing_if = "Option::is_none")]
    pub ua: Option<u8>,
    #[serde(rename = "RS", default, skip_serializing_if = "Option::is_none")]
    pub rs: Option<u8>,
}

impl JudgeScore {
    pub fn get(&self, aspect: Aspect) -> Option<u8> {
        match aspect {
            Aspect::FlipLabel => self.fl,
            Aspect::UnnecessaryAlterations => self.ua,
            Aspect::Realisticness => self.rs,
        }
    }

    fn set(&mut self, aspect: Aspect, value: u8) {
        match aspect {
            Aspect::FlipLabel => self.fl = Some(value),
            Aspect::UnnecessaryAlterations => self.ua = Some(value),
            Aspect::Realisticness => self.rs = Some(value),
        }
    }
}

/// Whether the judge saw the true target label or a corrupted one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionMode {
    Honest,
    Corrupted,
}

impl std::fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorruptionMode::Honest => write!(f, "honest"),
            CorruptionMode::Corrupted => write!(f, "corrupted"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeStatus {
    Ok,
    ParseFailure,
    TransportFailure,
}

/// One judged counterfactual.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub cf_id: String,
    pub judge_model: String,
    pub shown_label: String,
    pub mode: CorruptionMode,
    pub scores: JudgeScore,
    pub raw_response: String,
    pub parse_status: JudgeStatus,
}

/// The wrong label to show in the corrupted set. With three labels it is
/// the unique label distinct from both the factual and the target; with
/// two it is the label other than the target; with more it is a seeded
/// uniform choice among the remaining labels, deterministic per
/// (seed, factual, target).
pub fn corrupt_label(
    task: &Task,
    factual_label: &str,
    target_label: &str,
    seed: u64,
) -> Result<String, JudgeError> {
    if factual_label == target_label {
        return Err(JudgeError::FactualEqualsTarget);
    }
    for label in [factual_label, target_label] {
        if !task.has_label(label) {
            return Err(JudgeError::UnknownLabel(label.to_string()));
        }
    }
    if task.labels.len() == 2 {
        let other = task
            .labels
            .iter()
            .find(|l| *l != target_label)
            .expect("two labels, one differs");
        return Ok(other.clone());
    }
    let candidates: Vec<&String> = task
        .labels
        .iter()
        .filter(|l| *l != factual_label && *l != target_label)
        .collect();
    if candidates.len() == 1 {
        return Ok(candidates[0].clone());
    }
    let mut key = seed.to_le_bytes().to_vec();
    key.extend_from_slice(factual_label.as_bytes());
    key.push(0);
    key.extend_from_slice(target_label.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a_64(&key));
    Ok(candidates[rng.gen_range(0..candidates.len())].clone())
}

/// Judge prompt wording lives in a versioned template so protocols stay
/// comparable across judge models. The default ships with the crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeTemplate {
    pub version: String,
    pub preamble: String,
    pub scale_instruction: String,
    pub fl_instruction: String,
    pub ua_instruction: String,
    pub rs_instruction: String,
    pub classify_preamble: String,
}

impl Default for JudgeTemplate {
    fn default() -> Self {
        JudgeTemplate {
            version: "v1".to_string(),
            preamble: "You are evaluating a counterfactual edit of a text instance. The \
                       counterfactual was written so that its label becomes the proposed label."
                .to_string(),
            scale_instruction: "Rate each aspect on a scale from 1 to 4, where 1 or 2 means \
                                disagreement (complete or partial) and 3 or 4 means agreement \
                                (partial or complete)."
                .to_string(),
            fl_instruction: "Does the counterfactual accurately represent the proposed label?"
                .to_string(),
            ua_instruction: "Is the counterfactual free of unnecessary alterations to the \
                             original?"
                .to_string(),
            rs_instruction: "Is the counterfactual realistic?".to_string(),
            classify_preamble: "Classify the relationship described by the premise and the \
                                hypothesis below."
                .to_string(),
        }
    }
}

impl JudgeTemplate {
    pub fn from_toml_file(path: &Path) -> Result<Self, JudgeError> {
        let text = std::fs::read_to_string(path).map_err(|source| JudgeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| JudgeError::BadRecordFile {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })
    }

    fn instruction(&self, aspect: Aspect) -> &str {
        match aspect {
            Aspect::FlipLabel => &self.fl_instruction,
            Aspect::UnnecessaryAlterations => &self.ua_instruction,
            Aspect::Realisticness => &self.rs_instruction,
        }
    }
}

fn original_block(factual: &FactualInstance, cf: &CounterfactualRecord) -> String {
    match &factual.content {
        InstanceText::Single { text } => format!("Original: {text}"),
        InstanceText::Pair { premise, hypothesis } => {
            let edited = cf.edited_field.unwrap_or(EditedField::Premise);
            format!(
                "Original premise: {premise}\nOriginal hypothesis: {hypothesis}\nEdited field: {edited}"
            )
        }
    }
}

/// Render the scoring prompt. One prompt covers all requested aspects so
/// the cost stays at one call per counterfactual.
pub fn build_judge_prompt(
    template: &JudgeTemplate,
    factual: &FactualInstance,
    cf: &CounterfactualRecord,
    shown_label: &str,
    aspects: &[Aspect],
) -> String {
    let mut prompt = format!(
        "{}\n\n{}\nCounterfactual: {}\nProposed label: {}\n\n{}\n",
        template.preamble,
        original_block(factual, cf),
        cf.text,
        shown_label,
        template.scale_instruction,
    );
    for aspect in aspects {
        prompt.push_str(&format!(
            "{} {}\n",
            aspect.marker(),
            template.instruction(*aspect)
        ));
    }
    prompt.push_str("\nAnswer with one line per aspect, exactly in this form:\n");
    for aspect in aspects {
        prompt.push_str(&format!("{} <1-4>\n", aspect.marker()));
    }
    prompt
}

// Integer after the last occurrence of the marker, None when absent or not
// an integer in 1..=4.
fn extract_score(response: &str, marker: &str) -> Option<u8> {
    let idx = response.rfind(marker)?;
    let after = response[idx + marker.len()..].trim_start();
    let digits: String = after.chars().take_while(|c| c.is_ascii_digit()).collect();
    let value: u8 = digits.parse().ok()?;
    (1..=4).contains(&value).then_some(value)
}

/// Score one counterfactual on the requested aspects. Provider and parse
/// problems are encoded in the record's status, never raised, so a batch
/// keeps going.
pub fn judge_cf(
    chat: &dyn ChatClient,
    template: &JudgeTemplate,
    factual: &FactualInstance,
    cf: &CounterfactualRecord,
    shown_label: &str,
    mode: CorruptionMode,
    aspects: &[Aspect],
) -> Result<JudgeRecord, JudgeError> {
    if !cf.is_ok() {
        return Err(JudgeError::UnparsedCf(cf.cf_id.clone()));
    }
    let prompt = build_judge_prompt(template, factual, cf, shown_label, aspects);
    let judge_model = chat.id();
    let base = JudgeRecord {
        cf_id: cf.cf_id.clone(),
        judge_model,
        shown_label: shown_label.to_string(),
        mode,
        scores: JudgeScore::default(),
        raw_response: String::new(),
        parse_status: JudgeStatus::Ok,
    };
    match chat.complete(&prompt) {
        Ok(response) => {
            let mut scores = JudgeScore::default();
            let mut all_parsed = true;
            for aspect in aspects {
                match extract_score(&response, aspect.marker()) {
                    Some(value) => scores.set(*aspect, value),
                    None => all_parsed = false,
                }
            }
            Ok(JudgeRecord {
                scores: if all_parsed { scores } else { JudgeScore::default() },
                raw_response: response,
                parse_status: if all_parsed {
                    JudgeStatus::Ok
                } else {
                    JudgeStatus::ParseFailure
                },
                ..base
            })
        }
        Err(error) => Ok(JudgeRecord {
            raw_response: format!("provider failure: {error}"),
            parse_status: JudgeStatus::TransportFailure,
            ..base
        }),
    }
}

/// A classification-mode answer: the judge picks the label outright.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeClassification {
    pub cf_id: String,
    pub judge_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_label: Option<String>,
    pub raw_response: String,
}

fn normalize_label_text(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|token| {
            token
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Parse a free-form label answer: case-folded, punctuation stripped; the
/// whole answer or its first label-matching token wins.
pub fn parse_label_answer(response: &str, task: &Task) -> Option<String> {
    let tokens = normalize_label_text(response);
    let joined = tokens.join(" ");
    if let Some(label) = task.match_label(&joined) {
        return Some(label.to_string());
    }
    tokens
        .iter()
        .find_map(|token| task.match_label(token))
        .map(str::to_string)
}

/// Ask the judge to pick one of the task labels for the counterfactual
/// pair (the edited field substituted into the factual).
pub fn classify_mode(
    chat: &dyn ChatClient,
    template: &JudgeTemplate,
    factual: &FactualInstance,
    cf: &CounterfactualRecord,
    task: &Task,
) -> Result<JudgeClassification, JudgeError> {
    if !cf.is_ok() {
        return Err(JudgeError::UnparsedCf(cf.cf_id.clone()));
    }
    let (premise, hypothesis) = match (&factual.content, cf.edited_field) {
        (InstanceText::Pair { hypothesis, .. }, Some(EditedField::Premise)) => {
            (cf.text.as_str(), hypothesis.as_str())
        }
        (InstanceText::Pair { premise, .. }, Some(EditedField::Hypothesis)) => {
            (premise.as_str(), cf.text.as_str())
        }
        _ => return Err(JudgeError::NotAPairRecord),
    };
    let labels = task.labels.join(", ");
    let prompt = format!(
        "{}\n\nPremise: {}\nHypothesis: {}\n\nChoose exactly one label: {}.\nAnswer with the label only.",
        template.classify_preamble, premise, hypothesis, labels
    );
    let judge_model = chat.id();
    match chat.complete(&prompt) {
        Ok(response) => {
            let predicted_label = parse_label_answer(&response, task);
            Ok(JudgeClassification {
                cf_id: cf.cf_id.clone(),
                judge_model,
                predicted_label,
                raw_response: response,
            })
        }
        Err(error) => Ok(JudgeClassification {
            cf_id: cf.cf_id.clone(),
            judge_model,
            predicted_label: None,
            raw_response: format!("provider failure: {error}"),
        }),
    }
}

/// Accuracy of classification-mode answers against the target labels.
/// Absent when nothing parsed.
pub fn classification_accuracy<'a>(
    records: impl IntoIterator<Item = (&'a JudgeClassification, &'a str)>,
) -> Option<f64> {
    let mut n = 0usize;
    let mut hits = 0usize;
    for (record, target) in records {
        n += 1;
        if let Some(predicted) = &record.predicted_label {
            if predicted.eq_ignore_ascii_case(target) {
                hits += 1;
            }
        }
    }
    if n == 0 {
        None
    } else {
        Some(100.0 * hits as f64 / n as f64)
    }
}

/// Score distribution over parsed records: per-score percentages, the
/// disagreement (1&2) and agreement (3&4) bins, and the mean score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub pct_1: f64,
    pub pct_2: f64,
    pub pct_3: f64,
    pub pct_4: f64,
    pub pct_12: f64,
    pub pct_34: f64,
    pub avg: f64,
    pub n: usize,
}

pub fn score_distribution(
    records: &[JudgeRecord],
    aspect: Aspect,
) -> Result<ScoreDistribution, JudgeError> {
    let scores: Vec<u8> = records
        .iter()
        .filter(|r| r.parse_status == JudgeStatus::Ok)
        .filter_map(|r| r.scores.get(aspect))
        .collect();
    distribution_from_scores(&scores, aspect)
}

pub fn distribution_from_scores(
    scores: &[u8],
    aspect: Aspect,
) -> Result<ScoreDistribution, JudgeError> {
    if scores.is_empty() {
        return Err(JudgeError::EmptyDistribution(aspect.name()));
    }
    let mut counts = [0usize; 4];
    let mut sum = 0u64;
    for &score in scores {
        debug_assert!((1..=4).contains(&score));
        counts[(score - 1) as usize] += 1;
        sum += u64::from(score);
    }
    let n = scores.len() as f64;
    let pct = |c: usize| 100.0 * c as f64 / n;
    Ok(ScoreDistribution {
        pct_1: pct(counts[0]),
        pct_2: pct(counts[1]),
        pct_3: pct(counts[2]),
        pct_4: pct(counts[3]),
        pct_12: pct(counts[0] + counts[1]),
        pct_34: pct(counts[2] + counts[3]),
        avg: sum as f64 / n,
        n: scores.len(),
    })
}

/// Unweighted elementwise mean of two distributions of the same aspect,
/// e.g. combining the premise-edit and hypothesis-edit sets into one row.
pub fn average_distributions(a: &ScoreDistribution, b: &ScoreDistribution) -> ScoreDistribution {
    let mid = |x: f64, y: f64| (x + y) / 2.0;
    ScoreDistribution {
        pct_1: mid(a.pct_1, b.pct_1),
        pct_2: mid(a.pct_2, b.pct_2),
        pct_3: mid(a.pct_3, b.pct_3),
        pct_4: mid(a.pct_4, b.pct_4),
        pct_12: mid(a.pct_12, b.pct_12),
        pct_34: mid(a.pct_34, b.pct_34),
        avg: mid(a.avg, b.avg),
        n: a.n + b.n,
    }
}

fn normalize_copy(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// A degenerate pair-task counterfactual that reproduces the untouched
/// field: after trimming, whitespace collapsing and case folding, the
/// counterfactual equals the counterpart verbatim.
pub fn detect_copy_paste(
    factual: &FactualInstance,
    cf: &CounterfactualRecord,
) -> Result<bool, JudgeError> {
    if !cf.is_ok() {
        return Err(JudgeError::UnparsedCf(cf.cf_id.clone()));
    }
    let field = cf.edited_field.ok_or(JudgeError::NotAPairRecord)?;
    let untouched = factual
        .field(field.other())
        .ok_or(JudgeError::NotAPairRecord)?;
    Ok(normalize_copy(&cf.text) == normalize_copy(untouched))
}

/// Corpus-level copy-paste percentage over parsed pair records.
pub fn copy_paste_rate<'a>(
    pairs: impl IntoIterator<Item = (&'a FactualInstance, &'a CounterfactualRecord)>,
) -> Result<Option<f64>, JudgeError> {
    let mut n = 0usize;
    let mut copies = 0usize;
    for (factual, cf) in pairs {
        n += 1;
        if detect_copy_paste(factual, cf)? {
            copies += 1;
        }
    }
    Ok(if n == 0 {
        None
    } else {
        Some(100.0 * copies as f64 / n as f64)
    })
}

/// Write judge records one per line.
pub fn write_judge_records(records: &[JudgeRecord], path: &Path) -> Result<(), JudgeError> {
    let mut file = File::create(path).map_err(|source| JudgeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        file.write_all(line.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|source| JudgeError::Io {
                path: path.display().to_string(),
                source,
            })?;
    }
    Ok(())
}

pub fn load_judge_records(path: &Path) -> Result<Vec<JudgeRecord>, JudgeError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| JudgeError::Io {
        path: display.clone(),
        source,
    })?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| JudgeError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JudgeRecord =
            serde_json::from_str(&line).map_err(|e| JudgeError::BadRecordFile {
                path: display.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}
