//! Intrinsic counterfactual metrics: flip rate, textual similarity and
//! perplexity.
//!
//! Flip rate is the percentage of counterfactuals an external classifier
//! labels with the requested target label. Textual similarity is the mean
//! token-level Levenshtein distance to the factual, normalized by the
//! factual's token count (lower means closer). Perplexity is
//! `exp(-mean(log p))` over the scoring model's conditional token
//! log-probabilities.
//!
//! Only records that parsed cleanly enter any metric denominator. Exclusion
//! counts travel with every report so failed generations stay visible.

use crate::corpus::{DatasetSplit, FactualInstance, InstanceText, Task};
use crate::generation::{CounterfactualRecord, GenerationRun, ParseStatus};
use crate::providers::{ClassifierClient, ClassifyPayload, ProviderError, ScoringClient, TokenLogprobs};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("perplexity needs at least one token")]
    EmptyLogprobs,
    #[error("counterfactual {cf_id} references unknown factual {factual_id}")]
    UnknownFactual { cf_id: String, factual_id: String },
    #[error("counterfactual {cf_id} does not match the task shape")]
    ShapeMismatch { cf_id: String },
    #[error("classifier failed on {cf_id}: {source}")]
    ClassifierFailed {
        cf_id: String,
        source: ProviderError,
    },
    #[error("scorer failed on {cf_id}: {source}")]
    ScorerFailed {
        cf_id: String,
        source: ProviderError,
    },
    #[error("no parsed records to evaluate")]
    NoOkRecords,
}

/// Whitespace tokenization of a trimmed source string. `|tokens|` is the
/// token count every distance is normalized by.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub source: String,
    pub tokens: Vec<String>,
}

impl TokenizedText {
    pub fn new(source: &str) -> Self {
        TokenizedText {
            source: source.to_string(),
            tokens: source.split_whitespace().map(str::to_string).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Minimal number of insertions, deletions or substitutions turning `a`
/// into `b`. Two-row dynamic program, O(|a|*|b|) time, O(min) space.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, lt) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, st) in short.iter().enumerate() {
            let cost = if lt == st { 0 } else { 1 };
            let next = (diag + cost).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[short.len()]
}

/// Token edit distance between two tokenized texts.
pub fn token_distance(a: &TokenizedText, b: &TokenizedText) -> usize {
    levenshtein(&a.tokens, &b.tokens)
}

/// Per-pair normalized distance `d(x, x') / |x|`. `None` when the factual
/// tokenizes to nothing (the pair is excluded, never divided by zero).
pub fn pair_similarity(factual_text: &str, cf_text: &str) -> Option<f64> {
    let factual = TokenizedText::new(factual_text);
    if factual.is_empty() {
        return None;
    }
    let cf = TokenizedText::new(cf_text);
    Some(token_distance(&factual, &cf) as f64 / factual.len() as f64)
}

/// Outcome of averaging per-pair distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsSummary {
    /// Mean normalized distance over the included pairs. Absent when no
    /// pair survived the zero-token guard.
    pub mean: Option<f64>,
    pub n_used: usize,
    pub n_zero_token: usize,
}

/// Mean normalized token distance over (factual, counterfactual) text
/// pairs. Pairs whose factual has zero tokens are excluded and counted.
pub fn textual_similarity<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> TsSummary {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (factual, cf) in pairs {
        match pair_similarity(factual, cf) {
            Some(value) => {
                sum += value;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    TsSummary {
        mean: if used == 0 { None } else { Some(sum / used as f64) },
        n_used: used,
        n_zero_token: skipped,
    }
}

/// `exp(-(1/n) * sum(log p))` over conditional token log-probabilities.
pub fn perplexity(lp: &TokenLogprobs) -> Result<f64, MetricsError> {
    if lp.logprobs.is_empty() {
        return Err(MetricsError::EmptyLogprobs);
    }
    let mean: f64 = lp.logprobs.iter().sum::<f64>() / lp.logprobs.len() as f64;
    Ok((-mean).exp())
}

/// Percentage of flips over outcomes. Absent (never zero) for an empty set.
pub fn flip_percentage(flips: &[bool]) -> Option<f64> {
    if flips.is_empty() {
        return None;
    }
    let hits = flips.iter().filter(|f| **f).count();
    Some(100.0 * hits as f64 / flips.len() as f64)
}

/// The classification payload for a counterfactual: the whole edited text
/// for single-text tasks; for pair tasks the full pair with the edited
/// field substituted and the counterpart kept from the factual.
pub fn classify_payload(
    cf: &CounterfactualRecord,
    factual: &FactualInstance,
) -> Result<ClassifyPayload, MetricsError> {
    match (&factual.content, cf.edited_field) {
        (InstanceText::Single { .. }, None) => Ok(ClassifyPayload::text(cf.text.clone())),
        (InstanceText::Pair { premise, hypothesis }, Some(field)) => {
            let (premise, hypothesis) = match field {
                crate::corpus::EditedField::Premise => (cf.text.clone(), hypothesis.clone()),
                crate::corpus::EditedField::Hypothesis => (premise.clone(), cf.text.clone()),
            };
            Ok(ClassifyPayload::Pair { premise, hypothesis })
        }
        _ => Err(MetricsError::ShapeMismatch {
            cf_id: cf.cf_id.clone(),
        }),
    }
}

/// Classify every parsed counterfactual and report the percentage whose
/// predicted label equals the target label. Label comparison is
/// case-insensitive. A classifier protocol error aborts with the offending
/// record's id.
pub fn flip_rate<'a>(
    records: impl IntoIterator<Item = (&'a CounterfactualRecord, &'a FactualInstance)>,
    classifier: &dyn ClassifierClient,
    task: &Task,
) -> Result<Option<f64>, MetricsError> {
    let mut flips = Vec::new();
    for (cf, factual) in records {
        let payload = classify_payload(cf, factual)?;
        let prediction =
            classifier
                .classify(&payload, task)
                .map_err(|source| MetricsError::ClassifierFailed {
                    cf_id: cf.cf_id.clone(),
                    source,
                })?;
        flips.push(prediction.label.eq_ignore_ascii_case(&cf.target_label));
    }
    Ok(flip_percentage(&flips))
}

/// Exclusion counts itemized by why a record stayed out of the metric
/// denominators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExclusionCounts {
    pub template_violation: usize,
    pub refusal: usize,
    pub transport_failure: usize,
    pub zero_token_factual: usize,
}

impl ExclusionCounts {
    pub fn total(&self) -> usize {
        self.template_violation + self.refusal + self.transport_failure + self.zero_token_factual
    }

    pub fn count_status(&mut self, status: ParseStatus) {
        match status {
            ParseStatus::Ok => {}
            ParseStatus::TemplateViolation => self.template_violation += 1,
            ParseStatus::Refusal => self.refusal += 1,
            ParseStatus::TransportFailure => self.transport_failure += 1,
        }
    }
}

/// Aggregated intrinsic metrics for one generator on one dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntrinsicReport {
    pub generator: String,
    pub dataset: String,
    pub n_ok: usize,
    pub ppl: Option<f64>,
    pub ts: Option<f64>,
    pub fr: Option<f64>,
    pub excluded: ExclusionCounts,
}

/// Compute all three intrinsic metrics over the parsed records of a run.
///
/// The same ok subset feeds every metric; per-record perplexity comes from
/// the scoring provider on the counterfactual text and the dataset value is
/// the mean of per-record values.
pub fn intrinsic_report(
    run: &GenerationRun,
    factuals: &DatasetSplit,
    task: &Task,
    classifier: &dyn ClassifierClient,
    scorer: &dyn ScoringClient,
) -> Result<IntrinsicReport, MetricsError> {
    let mut excluded = ExclusionCounts::default();
    let mut ok_pairs: Vec<(&CounterfactualRecord, &FactualInstance)> = Vec::new();
    for record in &run.records {
        if record.parse_status != ParseStatus::Ok {
            excluded.count_status(record.parse_status);
            continue;
        }
        let factual = factuals
            .get(&record.factual_id)
            .ok_or_else(|| MetricsError::UnknownFactual {
                cf_id: record.cf_id.clone(),
                factual_id: record.factual_id.clone(),
            })?;
        ok_pairs.push((record, factual));
    }
    if ok_pairs.is_empty() {
        return Err(MetricsError::NoOkRecords);
    }

    // Distance on the edited field only; the counterpart is byte-identical
    // by construction so it would only dilute the value.
    let mut ts_sum = 0.0;
    let mut ts_used = 0usize;
    for (cf, factual) in &ok_pairs {
        let factual_text = factual
            .editable_text(cf.edited_field)
            .ok_or_else(|| MetricsError::ShapeMismatch {
                cf_id: cf.cf_id.clone(),
            })?;
        match pair_similarity(factual_text, &cf.text) {
            Some(value) => {
                ts_sum += value;
                ts_used += 1;
            }
            None => excluded.zero_token_factual += 1,
        }
    }
    let ts = if ts_used == 0 { None } else { Some(ts_sum / ts_used as f64) };

    let mut ppl_sum = 0.0;
    for (cf, _) in &ok_pairs {
        let lp = scorer
            .score_tokens(&cf.text)
            .map_err(|source| MetricsError::ScorerFailed {
                cf_id: cf.cf_id.clone(),
                source,
            })?;
        ppl_sum += perplexity(&lp)?;
    }
    let ppl = Some(ppl_sum / ok_pairs.len() as f64);

    let fr = flip_rate(ok_pairs.iter().map(|(cf, f)| (*cf, *f)), classifier, task)?;

    Ok(IntrinsicReport {
        generator: run.generator.clone(),
        dataset: run.dataset.clone(),
        n_ok: ok_pairs.len(),
        ppl,
        ts,
        fr,
        excluded,
    })
}
