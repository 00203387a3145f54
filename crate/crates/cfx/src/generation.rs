//! Prompt construction, generator invocation and templated-answer parsing.
//!
//! The prompt walks the model through three fixed steps: identify the words
//! that drive the label, find replacements that lead to the target label,
//! and apply them to produce the counterfactual. One fully worked
//! demonstration (the nearest human factual/counterfactual pair) precedes
//! the query, and the answer is expected to follow the demonstration's
//! template. Responses that do not are recorded as template violations,
//! never dropped: success-rate accounting needs every attempt.

use crate::corpus::{EditedField, FactualInstance, Task, TaskKind};
use crate::providers::{chat_complete, ChatClient, ChatOutcome, ProviderError};
use crate::retrieval::DemoPair;
use crate::util::render_placeholders;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("pair-text generation needs an edited field")]
    MissingEditedField,
    #[error("edited field given for a single-text task")]
    UnexpectedEditedField,
    #[error("target label {target:?} equals the factual label")]
    NonFlipTarget { target: String },
    #[error("target label {target:?} is not in the task label set")]
    UnknownTarget { target: String },
    #[error("no valid target label for factual label {0:?}")]
    NoTarget(String),
    #[error("success rate is undefined for an empty run")]
    EmptyRun,
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

/// Answer markers the model is expected to echo from the demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerMarkers {
    pub step1_prefix: String,
    pub step2_prefix: String,
    pub cf_prefix: String,
}

impl Default for AnswerMarkers {
    fn default() -> Self {
        AnswerMarkers {
            step1_prefix: "Step 1:".to_string(),
            step2_prefix: "Step 2:".to_string(),
            cf_prefix: "Counterfactual:".to_string(),
        }
    }
}

/// The prompt recipe: instruction, the three step texts, how the worked
/// demonstration is rendered, and the answer markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task_instruction: String,
    pub step_texts: [String; 3],
    pub demo_rendering: String,
    #[serde(default)]
    pub answer_markers: AnswerMarkers,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            task_instruction: "You are given a labeled text instance. Generate a counterfactual \
                               version of it: apply the smallest edit that changes its label to \
                               the given target label."
                .to_string(),
            step_texts: [
                "Identify all of the important words that contribute to flipping the label."
                    .to_string(),
                "Find replacements for the words identified in Step 1 that lead to the target \
                 label."
                    .to_string(),
                "Replace the words from Step 2 in the original text to obtain the \
                 counterfactual instance."
                    .to_string(),
            ],
            demo_rendering: "{instance}\nTarget label: {target_label}\nStep 1: {step1}\n\
                             Step 2: {step2}\n{cf_prefix} {counterfactual}"
                .to_string(),
            answer_markers: AnswerMarkers::default(),
        }
    }
}

impl PromptTemplate {
    /// Load a template override from a TOML file.
    pub fn from_toml_file(path: &Path) -> Result<Self, GenerationError> {
        let text = std::fs::read_to_string(path).map_err(|source| GenerationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| GenerationError::BadRecordFile {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })
    }
}

/// How a generation attempt ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    TemplateViolation,
    Refusal,
    TransportFailure,
}

/// One generation attempt, successful or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub cf_id: String,
    pub factual_id: String,
    pub generator: String,
    pub target_label: String,
    /// The counterfactual text: the whole text for single-text tasks, the
    /// edited field for pair tasks. Empty unless `parse_status` is ok.
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_field: Option<EditedField>,
    /// For pair tasks, the untouched field copied verbatim from the factual.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterpart: Option<String>,
    pub parse_status: ParseStatus,
    pub raw_response: String,
}

impl CounterfactualRecord {
    pub fn is_ok(&self) -> bool {
        self.parse_status == ParseStatus::Ok
    }
}

/// A batch of generation attempts with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRun {
    pub run_id: String,
    pub generator: String,
    pub dataset: String,
    /// `whole_text` for single-text tasks, else the edited side.
    pub edited_field_policy: String,
    pub seed: u64,
    #[serde(skip)]
    pub records: Vec<CounterfactualRecord>,
}

/// Render the instance block shown in prompts. Pair instances mark which
/// side is editable so the model leaves the other side alone.
fn instance_block(instance: &FactualInstance, edited_field: Option<EditedField>) -> String {
    match (&instance.content, edited_field) {
        (crate::corpus::InstanceText::Single { text }, _) => {
            format!("Original ({}): {}", instance.label, text)
        }
        (crate::corpus::InstanceText::Pair { premise, hypothesis }, field) => {
            let field = field.unwrap_or(EditedField::Premise);
            let tag = |f: EditedField| if f == field { "editable" } else { "unchanged" };
            format!(
                "Premise ({}): {}\nHypothesis ({}): {}\nLabel: {}",
                tag(EditedField::Premise),
                premise,
                tag(EditedField::Hypothesis),
                hypothesis,
                instance.label
            )
        }
    }
}

/// Derive the demonstration's worked steps from the factual/counterfactual
/// pair: words only on the factual side were identified, words only on the
/// counterfactual side are their replacements.
fn demo_steps(factual_text: &str, cf_text: &str) -> (String, String) {
    let mut cf_tokens: Vec<&str> = cf_text.split_whitespace().collect();
    let mut removed = Vec::new();
    for token in factual_text.split_whitespace() {
        if let Some(pos) = cf_tokens.iter().position(|t| *t == token) {
            cf_tokens.remove(pos);
        } else {
            removed.push(token);
        }
    }
    let mut factual_tokens: Vec<&str> = factual_text.split_whitespace().collect();
    let mut added = Vec::new();
    for token in cf_text.split_whitespace() {
        if let Some(pos) = factual_tokens.iter().position(|t| *t == token) {
            factual_tokens.remove(pos);
        } else {
            added.push(token);
        }
    }
    let join = |words: Vec<&str>| {
        if words.is_empty() {
            "none".to_string()
        } else {
            words.join(", ")
        }
    };
    (join(removed), join(added))
}

fn check_preconditions(
    task: &Task,
    query: &FactualInstance,
    target_label: &str,
    edited_field: Option<EditedField>,
) -> Result<(), GenerationError> {
    match (task.kind, edited_field) {
        (TaskKind::PairText, None) => return Err(GenerationError::MissingEditedField),
        (TaskKind::SingleText, Some(_)) => return Err(GenerationError::UnexpectedEditedField),
        _ => {}
    }
    if !task.has_label(target_label) {
        return Err(GenerationError::UnknownTarget {
            target: target_label.to_string(),
        });
    }
    if target_label == query.label {
        return Err(GenerationError::NonFlipTarget {
            target: target_label.to_string(),
        });
    }
    Ok(())
}

/// Build the full generation prompt: instruction, the three steps, the
/// worked demonstration, then the query instance with its target label.
/// A pure function of its inputs.
pub fn build_prompt(
    template: &PromptTemplate,
    demo: &DemoPair,
    query: &FactualInstance,
    target_label: &str,
    edited_field: Option<EditedField>,
    task: &Task,
) -> Result<String, GenerationError> {
    check_preconditions(task, query, target_label, edited_field)?;

    let demo_factual_text = demo
        .factual
        .editable_text(demo.edited_field)
        .unwrap_or_default();
    let (step1, step2) = demo_steps(demo_factual_text, &demo.counterfactual_text);
    let demo_block = render_placeholders(
        &template.demo_rendering,
        &[
            ("instance", &instance_block(&demo.factual, demo.edited_field)),
            ("target_label", &demo.target_label),
            ("step1", &step1),
            ("step2", &step2),
            ("cf_prefix", &template.answer_markers.cf_prefix),
            ("counterfactual", &demo.counterfactual_text),
        ],
    );

    Ok(format!(
        "{instruction}\n\nFollow these steps:\nStep 1: {s1}\nStep 2: {s2}\nStep 3: {s3}\n\n\
         Example:\n{demo}\n\nNow apply the same steps to this instance and answer in the same \
         format.\n{query}\nTarget label: {target}",
        instruction = template.task_instruction,
        s1 = template.step_texts[0],
        s2 = template.step_texts[1],
        s3 = template.step_texts[2],
        demo = demo_block,
        query = instance_block(query, edited_field),
        target = target_label,
    ))
}

/// Extract the counterfactual from a model response: the trimmed content
/// after the last `cf_prefix`, cut at the first blank line. `None` when
/// the prefix is absent or nothing follows it.
pub fn extract_counterfactual(response: &str, cf_prefix: &str) -> Option<String> {
    let idx = response.rfind(cf_prefix)?;
    let after = &response[idx + cf_prefix.len()..];
    let mut kept = Vec::new();
    for line in after.lines() {
        if line.trim().is_empty() && !kept.is_empty() {
            break;
        }
        if !line.trim().is_empty() {
            kept.push(line);
        }
    }
    let text = kept.join("\n").trim().to_string();
    if text.is_empty() {
        None
    } else {
        Some(text)
    }
}

// Appended once when the first answer does not follow the template.
const REPAIR_INSTRUCTION: &str = "Answer using the exact template.";

/// Run one generation attempt end to end. Provider outcomes never abort:
/// refusals, transport failures and template violations all come back as
/// records with the matching parse status. A template violation is retried
/// once with an appended repair instruction; a second violation is final.
#[allow(clippy::too_many_arguments)]
pub fn generate_cf(
    chat: &dyn ChatClient,
    refusal_markers: &[String],
    template: &PromptTemplate,
    demo: &DemoPair,
    query: &FactualInstance,
    target_label: &str,
    edited_field: Option<EditedField>,
    generator: &str,
    task: &Task,
) -> Result<CounterfactualRecord, GenerationError> {
    let prompt = build_prompt(template, demo, query, target_label, edited_field, task)?;

    let mut cf_id = format!("{}~{}", query.id, target_label);
    if let Some(field) = edited_field {
        cf_id.push('~');
        cf_id.push_str(field.as_str());
    }
    let counterpart = edited_field
        .and_then(|field| query.field(field.other()))
        .map(str::to_string);
    let record = |text: String, parse_status: ParseStatus, raw_response: String| {
        CounterfactualRecord {
            cf_id: cf_id.clone(),
            factual_id: query.id.clone(),
            generator: generator.to_string(),
            target_label: target_label.to_string(),
            text,
            edited_field,
            counterpart: counterpart.clone(),
            parse_status,
            raw_response,
        }
    };

    let mut attempt_prompt = prompt.clone();
    for attempt in 0..2 {
        match chat_complete(chat, &attempt_prompt, refusal_markers) {
            Ok(ChatOutcome::Text(response)) => {
                match extract_counterfactual(&response, &template.answer_markers.cf_prefix) {
                    Some(text) => return Ok(record(text, ParseStatus::Ok, response)),
                    None if attempt == 0 => {
                        attempt_prompt = format!("{prompt}\n{REPAIR_INSTRUCTION}");
                    }
                    None => {
                        return Ok(record(String::new(), ParseStatus::TemplateViolation, response))
                    }
                }
            }
            Ok(ChatOutcome::Refusal(response)) => {
                return Ok(record(String::new(), ParseStatus::Refusal, response))
            }
            Err(error) => {
                return Ok(record(
                    String::new(),
                    ParseStatus::TransportFailure,
                    describe_failure(&error),
                ))
            }
        }
    }
    unreachable!("second attempt always returns")
}

fn describe_failure(error: &ProviderError) -> String {
    format!("provider failure: {error}")
}

/// Percentage of attempts that produced a template-conformant answer.
/// Refusals and transport failures count as failures.
pub fn success_rate(run: &GenerationRun) -> Result<f64, GenerationError> {
    if run.records.is_empty() {
        return Err(GenerationError::EmptyRun);
    }
    let ok = run.records.iter().filter(|r| r.is_ok()).count();
    Ok(100.0 * ok as f64 / run.records.len() as f64)
}

/// Default flip policy: binary tasks take the other label; the canonical
/// three-label inference task cycles entailment to contradiction,
/// contradiction to entailment and neutral to entailment; larger sets take
/// the first label that differs. Callers can override per request.
pub fn default_target(task: &Task, factual_label: &str) -> Result<String, GenerationError> {
    if task.labels.len() == 2 {
        return task
            .labels
            .iter()
            .find(|l| *l != factual_label)
            .cloned()
            .ok_or_else(|| GenerationError::NoTarget(factual_label.to_string()));
    }
    if *task == Task::nli() {
        let target = match factual_label {
            "entailment" => "contradiction",
            "contradiction" => "entailment",
            "neutral" => "entailment",
            other => return Err(GenerationError::NoTarget(other.to_string())),
        };
        return Ok(target.to_string());
    }
    task.labels
        .iter()
        .find(|l| *l != factual_label)
        .cloned()
        .ok_or_else(|| GenerationError::NoTarget(factual_label.to_string()))
}

const RUN_HEADER_KIND: &str = "run_header";

#[derive(Serialize, Deserialize)]
struct RunHeader {
    kind: String,
    run_id: String,
    generator: String,
    dataset: String,
    edited_field_policy: String,
    seed: u64,
}

/// Write a run as a header line followed by one record per line.
pub fn write_run(run: &GenerationRun, path: &Path) -> Result<(), GenerationError> {
    let mut file = File::create(path).map_err(|source| GenerationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let header = RunHeader {
        kind: RUN_HEADER_KIND.to_string(),
        run_id: run.run_id.clone(),
        generator: run.generator.clone(),
        dataset: run.dataset.clone(),
        edited_field_policy: run.edited_field_policy.clone(),
        seed: run.seed,
    };
    let mut write_line = |value: String| -> Result<(), GenerationError> {
        file.write_all(value.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|source| GenerationError::Io {
                path: path.display().to_string(),
                source,
            })
    };
    write_line(serde_json::to_string(&header).expect("header serializes"))?;
    for record in &run.records {
        write_line(serde_json::to_string(record).expect("record serializes"))?;
    }
    Ok(())
}

/// Read a run back. The header line is optional so externally produced
/// record files load too; missing header fields fall back to the records.
pub fn load_run(path: &Path) -> Result<GenerationRun, GenerationError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| GenerationError::Io {
        path: display.clone(),
        source,
    })?;
    let mut run = GenerationRun {
        run_id: String::new(),
        generator: String::new(),
        dataset: String::new(),
        edited_field_policy: "whole_text".to_string(),
        seed: 0,
        records: Vec::new(),
    };
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| GenerationError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(header) = serde_json::from_str::<RunHeader>(&line) {
                if header.kind == RUN_HEADER_KIND {
                    run.run_id = header.run_id;
                    run.generator = header.generator;
                    run.dataset = header.dataset;
                    run.edited_field_policy = header.edited_field_policy;
                    run.seed = header.seed;
                    continue;
                }
            }
        }
        let record: CounterfactualRecord =
            serde_json::from_str(&line).map_err(|e| GenerationError::BadRecordFile {
                path: display.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        run.records.push(record);
    }
    if run.generator.is_empty() {
        if let Some(first) = run.records.first() {
            run.generator = first.generator.clone();
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{CallCounter, LexiconSwapChat, RefusalChat, ScriptedChat};
    use crate::providers::default_refusal_markers;
    use crate::retrieval::DemoPair;
    use std::collections::HashMap;

    fn sa_demo() -> DemoPair {
        DemoPair {
            factual: FactualInstance::single("v1", "a moving heartfelt drama", "positive"),
            counterfactual_text: "a dull hollow drama".to_string(),
            edited_field: None,
            target_label: "negative".to_string(),
        }
    }

    fn sa_query() -> FactualInstance {
        FactualInstance::single("t1", "the film was great", "positive")
    }

    #[test]
    fn build_prompt_is_deterministic() {
        let template = PromptTemplate::default();
        let task = Task::sentiment();
        let a = build_prompt(&template, &sa_demo(), &sa_query(), "negative", None, &task).unwrap();
        let b = build_prompt(&template, &sa_demo(), &sa_query(), "negative", None, &task).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prompt_contains_cf_prefix_exactly_once() {
        let template = PromptTemplate::default();
        let task = Task::sentiment();
        let prompt =
            build_prompt(&template, &sa_demo(), &sa_query(), "negative", None, &task).unwrap();
        assert_eq!(prompt.matches("Counterfactual:").count(), 1);
        // Ordering: instruction, steps, demo, query, target.
        let idx = |needle: &str| prompt.find(needle).unwrap();
        assert!(idx("Follow these steps") < idx("Example:"));
        assert!(idx("Example:") < idx("Now apply the same steps"));
        assert!(prompt.ends_with("Target label: negative"));
    }

    #[test]
    fn pair_prompt_marks_editable_side() {
        let template = PromptTemplate::default();
        let task = Task::nli();
        let demo = DemoPair {
            factual: FactualInstance::pair("v1", "a man walks", "a person moves", "entailment"),
            counterfactual_text: "a man sits".to_string(),
            edited_field: Some(EditedField::Premise),
            target_label: "contradiction".to_string(),
        };
        let query = FactualInstance::pair("q1", "kids play soccer", "children play", "entailment");
        let prompt = build_prompt(
            &template,
            &demo,
            &query,
            "contradiction",
            Some(EditedField::Premise),
            &task,
        )
        .unwrap();
        assert!(prompt.contains("Premise (editable): kids play soccer"));
        assert!(prompt.contains("Hypothesis (unchanged): children play"));
    }

    #[test]
    fn demo_steps_diff_words() {
        let (removed, added) = demo_steps("a moving heartfelt drama", "a dull hollow drama");
        assert_eq!(removed, "moving, heartfelt");
        assert_eq!(added, "dull, hollow");
        let (none_removed, none_added) = demo_steps("same text", "same text");
        assert_eq!(none_removed, "none");
        assert_eq!(none_added, "none");
    }

    #[test]
    fn extraction_rules() {
        assert_eq!(
            extract_counterfactual(
                "Step 1: words\nStep 2: repl\nCounterfactual: a dull film",
                "Counterfactual:"
            ),
            Some("a dull film".to_string())
        );
        // Prefix missing entirely.
        assert_eq!(extract_counterfactual("no marker here", "Counterfactual:"), None);
        // Last occurrence wins (the demo echo comes first).
        assert_eq!(
            extract_counterfactual(
                "Counterfactual: echoed demo\n...\nCounterfactual: the real answer",
                "Counterfactual:"
            ),
            Some("the real answer".to_string())
        );
        // Truncated at the first blank line.
        assert_eq!(
            extract_counterfactual(
                "Counterfactual: a dull film\n\nExplanation: because reasons",
                "Counterfactual:"
            ),
            Some("a dull film".to_string())
        );
        // Empty content after the prefix is a violation, not an empty ok.
        assert_eq!(extract_counterfactual("Counterfactual:   ", "Counterfactual:"), None);
    }

    fn run_generate(chat: &dyn ChatClient) -> CounterfactualRecord {
        generate_cf(
            chat,
            &default_refusal_markers(),
            &PromptTemplate::default(),
            &sa_demo(),
            &sa_query(),
            "negative",
            None,
            "mock-gen",
            &Task::sentiment(),
        )
        .unwrap()
    }

    #[test]
    fn well_formed_response_parses_ok() {
        let mut swaps = HashMap::new();
        swaps.insert("great".to_string(), "dull".to_string());
        let record = run_generate(&LexiconSwapChat::new(swaps));
        assert_eq!(record.parse_status, ParseStatus::Ok);
        assert_eq!(record.text, "the film was dull");
        assert_eq!(record.cf_id, "t1~negative");
    }

    #[test]
    fn missing_marker_is_template_violation_after_repair() {
        let chat = CallCounter::new(ScriptedChat::new().with_fallback("no marker anywhere"));
        let calls = chat.calls_handle();
        let record = run_generate(&chat);
        assert_eq!(record.parse_status, ParseStatus::TemplateViolation);
        assert!(record.text.is_empty());
        // One original attempt plus one repair attempt.
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 2);
    }

    #[test]
    fn repair_retry_can_recover() {
        let template = PromptTemplate::default();
        let task = Task::sentiment();
        let prompt =
            build_prompt(&template, &sa_demo(), &sa_query(), "negative", None, &task).unwrap();
        let repaired = format!("{prompt}\n{REPAIR_INSTRUCTION}");
        let chat = ScriptedChat::new()
            .with_response(&prompt, "rambling that ignores the template")
            .with_response(&repaired, "Counterfactual: the film was dreadful");
        let record = run_generate(&chat);
        assert_eq!(record.parse_status, ParseStatus::Ok);
        assert_eq!(record.text, "the film was dreadful");
    }

    #[test]
    fn refusal_is_recorded_not_raised() {
        let record = run_generate(&RefusalChat::new());
        assert_eq!(record.parse_status, ParseStatus::Refusal);
        assert!(record.raw_response.contains("I cannot"));
    }

    #[test]
    fn transport_failure_is_recorded_not_raised() {
        // Scripted chat with no entries and no fallback errors out.
        let record = run_generate(&ScriptedChat::new());
        assert_eq!(record.parse_status, ParseStatus::TransportFailure);
        assert!(record.raw_response.contains("provider failure"));
    }

    #[test]
    fn pair_records_copy_the_counterpart_verbatim() {
        let task = Task::nli();
        let demo = DemoPair {
            factual: FactualInstance::pair("v1", "a man walks", "a person moves", "entailment"),
            counterfactual_text: "a man never walks".to_string(),
            edited_field: Some(EditedField::Premise),
            target_label: "contradiction".to_string(),
        };
        let query =
            FactualInstance::pair("q1", "kids play soccer", "children play a game", "entailment");
        let mut swaps = HashMap::new();
        swaps.insert("play".to_string(), "hate".to_string());
        let record = generate_cf(
            &LexiconSwapChat::new(swaps),
            &default_refusal_markers(),
            &PromptTemplate::default(),
            &demo,
            &query,
            "contradiction",
            Some(EditedField::Premise),
            "mock-gen",
            &task,
        )
        .unwrap();
        assert_eq!(record.parse_status, ParseStatus::Ok);
        assert_eq!(record.counterpart.as_deref(), Some("children play a game"));
        assert_eq!(record.text, "kids hate soccer");
    }

    #[test]
    fn precondition_errors() {
        let task = Task::sentiment();
        let err = build_prompt(
            &PromptTemplate::default(),
            &sa_demo(),
            &sa_query(),
            "positive",
            None,
            &task,
        )
        .unwrap_err();
        assert!(matches!(err, GenerationError::NonFlipTarget { .. }));

        let nli = Task::nli();
        let err = build_prompt(
            &PromptTemplate::default(),
            &sa_demo(),
            &FactualInstance::pair("x", "p", "h", "entailment"),
            "contradiction",
            None,
            &nli,
        )
        .unwrap_err();
        assert!(matches!(err, GenerationError::MissingEditedField));
    }

    fn run_with_statuses(statuses: &[ParseStatus]) -> GenerationRun {
        GenerationRun {
            run_id: "r".into(),
            generator: "g".into(),
            dataset: "d".into(),
            edited_field_policy: "whole_text".into(),
            seed: 0,
            records: statuses
                .iter()
                .enumerate()
                .map(|(i, status)| CounterfactualRecord {
                    cf_id: format!("cf{i}"),
                    factual_id: format!("f{i}"),
                    generator: "g".into(),
                    target_label: "negative".into(),
                    text: if *status == ParseStatus::Ok { "x".into() } else { String::new() },
                    edited_field: None,
                    counterpart: None,
                    parse_status: *status,
                    raw_response: String::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn success_rate_accounting() {
        use ParseStatus::*;
        let seven_of_ten = run_with_statuses(&[
            Ok, Ok, Ok, Ok, Ok, Ok, Ok, TemplateViolation, TemplateViolation, Refusal,
        ]);
        assert_eq!(success_rate(&seven_of_ten).unwrap(), 70.0);

        let all_ok = run_with_statuses(&[Ok, Ok, Ok]);
        assert_eq!(success_rate(&all_ok).unwrap(), 100.0);

        let all_refused = run_with_statuses(&[Refusal, Refusal]);
        assert_eq!(success_rate(&all_refused).unwrap(), 0.0);

        let empty = run_with_statuses(&[]);
        assert!(matches!(
            success_rate(&empty),
            Err(GenerationError::EmptyRun)
        ));
    }

    #[test]
    fn default_target_policy() {
        let sa = Task::sentiment();
        assert_eq!(default_target(&sa, "positive").unwrap(), "negative");
        assert_eq!(default_target(&sa, "negative").unwrap(), "positive");

        let nli = Task::nli();
        assert_eq!(default_target(&nli, "entailment").unwrap(), "contradiction");
        assert_eq!(default_target(&nli, "contradiction").unwrap(), "entailment");
        assert_eq!(default_target(&nli, "neutral").unwrap(), "entailment");
    }

    #[test]
    fn shipped_template_file_matches_default() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("templates/generation_v1.toml");
        let loaded = PromptTemplate::from_toml_file(&path).unwrap();
        assert_eq!(loaded, PromptTemplate::default());
    }

    #[test]
    fn run_roundtrip_through_file() {
        let run = run_with_statuses(&[ParseStatus::Ok, ParseStatus::Refusal]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        write_run(&run, &path).unwrap();
        let loaded = load_run(&path).unwrap();
        assert_eq!(loaded.records, run.records);
        assert_eq!(loaded.generator, "g");
        assert_eq!(loaded.edited_field_policy, "whole_text");

        // Identical bytes when re-written.
        let second = dir.path().join("run2.jsonl");
        write_run(&loaded, &second).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }
}
