//! Deterministic offline providers.
//!
//! Everything here is a pure function of its inputs (plus construction
//! parameters), so pipelines wired to mocks produce byte-identical outputs
//! across runs. The mocks double as test fixtures and as the offline
//! backends selectable from run configs.

use super::transport::{Transport, TransportError};
use super::{
    ChatClient, ClassifierClient, ClassifierPrediction, ClassifyPayload, EmbeddingClient,
    EmbeddingVector, ProviderError, ScoringClient, TokenLogprobs,
};
use crate::corpus::Task;
use crate::util::sha256_hex;
use serde_json::Value;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

/// Chat mock keyed by prompt digest. Unknown prompts fall back to the
/// configured default or fail with the digest so fixtures are easy to fix.
pub struct ScriptedChat {
    by_digest: HashMap<String, String>,
    fallback: Option<String>,
}

impl ScriptedChat {
    pub fn new() -> Self {
        ScriptedChat {
            by_digest: HashMap::new(),
            fallback: None,
        }
    }

    pub fn with_response(mut self, prompt: &str, response: &str) -> Self {
        self.by_digest
            .insert(sha256_hex(prompt.as_bytes()), response.to_string());
        self
    }

    pub fn with_fallback(mut self, response: &str) -> Self {
        self.fallback = Some(response.to_string());
        self
    }

    /// Load a script: one JSON record per line, either
    /// `{"prompt": ..., "response": ...}` or `{"digest": ..., "response": ...}`.
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("script {}: {e}", path.display())))?;
        let mut script = ScriptedChat::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: Value = serde_json::from_str(line).map_err(|e| {
                ProviderError::Config(format!("script {}:{}: {e}", path.display(), idx + 1))
            })?;
            let response = record
                .get("response")
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    ProviderError::Config(format!(
                        "script {}:{}: missing response",
                        path.display(),
                        idx + 1
                    ))
                })?;
            let digest = match (record.get("digest"), record.get("prompt")) {
                (Some(d), _) if d.is_string() => d.as_str().unwrap().to_string(),
                (_, Some(p)) if p.is_string() => sha256_hex(p.as_str().unwrap().as_bytes()),
                _ => {
                    return Err(ProviderError::Config(format!(
                        "script {}:{}: need prompt or digest",
                        path.display(),
                        idx + 1
                    )))
                }
            };
            script.by_digest.insert(digest, response.to_string());
        }
        Ok(script)
    }
}

impl Default for ScriptedChat {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatClient for ScriptedChat {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let digest = sha256_hex(prompt.as_bytes());
        if let Some(hit) = self.by_digest.get(&digest) {
            return Ok(hit.clone());
        }
        self.fallback
            .clone()
            .ok_or(ProviderError::ScriptMiss(digest))
    }

    fn id(&self) -> String {
        "mock-scripted".to_string()
    }
}

/// Always refuses. Models endpoints whose safety layer declines a task.
pub struct RefusalChat {
    message: String,
}

impl RefusalChat {
    pub fn new() -> Self {
        RefusalChat {
            message: "I cannot assist with that request.".to_string(),
        }
    }

    pub fn with_message(message: &str) -> Self {
        RefusalChat {
            message: message.to_string(),
        }
    }
}

impl Default for RefusalChat {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatClient for RefusalChat {
    fn complete(&self, _prompt: &str) -> Result<String, ProviderError> {
        Ok(self.message.clone())
    }

    fn id(&self) -> String {
        "mock-refusal".to_string()
    }
}

// Strip punctuation from token edges, keeping the core word.
fn split_token(token: &str) -> (&str, &str, &str) {
    let start = token
        .find(|c: char| c.is_alphanumeric())
        .unwrap_or(token.len());
    let end = token
        .rfind(|c: char| c.is_alphanumeric())
        .map_or(start, |i| i + c_len(token, i));
    (&token[..start], &token[start..end], &token[end..])
}

fn c_len(s: &str, byte_idx: usize) -> usize {
    s[byte_idx..].chars().next().map_or(0, char::len_utf8)
}

/// Offline generator: reads the query block out of the prompt, swaps every
/// lexicon word and answers in the exact step template. Gives mock
/// pipelines real label flips to measure.
pub struct LexiconSwapChat {
    swaps: HashMap<String, String>,
}

impl LexiconSwapChat {
    pub fn new(swaps: HashMap<String, String>) -> Self {
        LexiconSwapChat { swaps }
    }

    fn swap_text(&self, text: &str) -> (Vec<String>, Vec<String>, String) {
        let mut identified = Vec::new();
        let mut replacements = Vec::new();
        let swapped: Vec<String> = text
            .split_whitespace()
            .map(|token| {
                let (prefix, core, suffix) = split_token(token);
                match self.swaps.get(&core.to_lowercase()) {
                    Some(replacement) => {
                        identified.push(core.to_string());
                        replacements.push(replacement.clone());
                        format!("{prefix}{replacement}{suffix}")
                    }
                    None => token.to_string(),
                }
            })
            .collect();
        (identified, replacements, swapped.join(" "))
    }
}

impl ChatClient for LexiconSwapChat {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        // The query block is the last "Original (...)" or "... (editable)"
        // line in the prompt; everything renders one instance per line.
        let query = prompt
            .lines()
            .rev()
            .find_map(|line| {
                let line = line.trim();
                if let Some(rest) = line.strip_prefix("Original (") {
                    rest.split_once("): ").map(|(_, text)| text)
                } else if let Some(rest) = line.strip_prefix("Premise (editable): ") {
                    Some(rest)
                } else if let Some(rest) = line.strip_prefix("Hypothesis (editable): ") {
                    Some(rest)
                } else {
                    None
                }
            })
            .ok_or_else(|| {
                ProviderError::Protocol("prompt does not contain an instance line".into())
            })?;
        let (identified, replacements, swapped) = self.swap_text(query);
        let join = |words: &[String]| {
            if words.is_empty() {
                "none".to_string()
            } else {
                words.join(", ")
            }
        };
        Ok(format!(
            "Step 1: {}\nStep 2: {}\nCounterfactual: {}",
            join(&identified),
            join(&replacements),
            swapped
        ))
    }

    fn id(&self) -> String {
        "mock-lexicon-swap".to_string()
    }
}

/// Letter-frequency embedder: 26 dimensions of case-folded ASCII letter
/// counts. Crude, but fully deterministic and good enough to make cosine
/// retrieval meaningful in tests.
pub struct LetterFreqEmbedder;

impl EmbeddingClient for LetterFreqEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyInput("embedding batch"));
        }
        texts
            .iter()
            .map(|text| {
                let mut counts = vec![0.0f64; 26];
                for c in text.chars() {
                    let folded = c.to_ascii_lowercase();
                    if folded.is_ascii_lowercase() {
                        counts[(folded as u8 - b'a') as usize] += 1.0;
                    }
                }
                EmbeddingVector::new(counts)
            })
            .collect()
    }

    fn id(&self) -> String {
        "mock-letter-freq".to_string()
    }
}

/// Scorer that pretends every token is drawn uniformly from a vocabulary
/// of the configured size: each log-probability is `-ln(V)`.
pub struct UniformScorer {
    vocab_size: usize,
}

impl UniformScorer {
    pub fn new(vocab_size: usize) -> Self {
        UniformScorer {
            vocab_size: vocab_size.max(1),
        }
    }
}

impl ScoringClient for UniformScorer {
    fn score_tokens(&self, text: &str) -> Result<TokenLogprobs, ProviderError> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(ProviderError::EmptyInput("text to score"));
        }
        let lp = -(self.vocab_size as f64).ln();
        let logprobs = vec![lp; tokens.len()];
        TokenLogprobs::new(tokens, logprobs)
    }

    fn id(&self) -> String {
        format!("mock-uniform-scorer/{}", self.vocab_size)
    }
}

/// Word-weight sentiment classifier. The summed weight decides between the
/// configured positive and negative labels; a zero sum falls back to the
/// first label in the task's label order.
pub struct LexiconClassifier {
    weights: HashMap<String, f64>,
    positive_label: String,
    negative_label: String,
}

impl LexiconClassifier {
    pub fn new(
        weights: HashMap<String, f64>,
        positive_label: impl Into<String>,
        negative_label: impl Into<String>,
    ) -> Self {
        LexiconClassifier {
            weights,
            positive_label: positive_label.into(),
            negative_label: negative_label.into(),
        }
    }
}

impl ClassifierClient for LexiconClassifier {
    fn classify(
        &self,
        payload: &ClassifyPayload,
        task: &Task,
    ) -> Result<ClassifierPrediction, ProviderError> {
        let text = match payload {
            ClassifyPayload::Text { text } => text,
            ClassifyPayload::Pair { .. } => {
                return Err(ProviderError::Protocol(
                    "lexicon classifier handles single texts only".into(),
                ))
            }
        };
        let net: f64 = text
            .split_whitespace()
            .map(|token| {
                let (_, core, _) = split_token(token);
                self.weights.get(&core.to_lowercase()).copied().unwrap_or(0.0)
            })
            .sum();
        let label = if net > 0.0 {
            &self.positive_label
        } else if net < 0.0 {
            &self.negative_label
        } else {
            &task.labels[0]
        };
        let mut scores = BTreeMap::new();
        scores.insert(self.positive_label.clone(), net);
        scores.insert(self.negative_label.clone(), -net);
        ClassifierPrediction::validated(label, Some(scores), task)
    }

    fn id(&self) -> String {
        "mock-lexicon-classifier".to_string()
    }
}

fn normalize_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| split_token(t).1.to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

const NEGATION_WORDS: [&str; 5] = ["not", "no", "never", "nobody", "nothing"];

/// Heuristic pair classifier for offline inference runs: identical sides
/// entail, a one-sided negation contradicts, full token coverage entails,
/// anything else is neutral.
pub struct OverlapClassifier;

impl ClassifierClient for OverlapClassifier {
    fn classify(
        &self,
        payload: &ClassifyPayload,
        task: &Task,
    ) -> Result<ClassifierPrediction, ProviderError> {
        let (premise, hypothesis) = match payload {
            ClassifyPayload::Pair { premise, hypothesis } => (premise, hypothesis),
            ClassifyPayload::Text { .. } => {
                return Err(ProviderError::Protocol(
                    "overlap classifier handles premise/hypothesis pairs only".into(),
                ))
            }
        };
        let p = normalize_tokens(premise);
        let h = normalize_tokens(hypothesis);
        let negated = |tokens: &[String]| tokens.iter().any(|t| NEGATION_WORDS.contains(&t.as_str()));
        let label = if p == h {
            "entailment"
        } else if negated(&p) != negated(&h) {
            "contradiction"
        } else if !h.is_empty() && h.iter().all(|t| p.contains(t)) {
            "entailment"
        } else {
            "neutral"
        };
        ClassifierPrediction::validated(label, None, task)
    }

    fn id(&self) -> String {
        "mock-overlap-classifier".to_string()
    }
}

/// Offline judge producing pseudo-random but reproducible 1..4 scores from
/// the prompt digest. Keeps end-to-end runs deterministic while exercising
/// the whole score range.
pub struct HashScoreJudge;

impl ChatClient for HashScoreJudge {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let digest = sha256_hex(prompt.as_bytes());
        let bytes = digest.as_bytes();
        let score = |i: usize| 1 + (bytes[i] as u32) % 4;
        Ok(format!(
            "FL: {}\nUA: {}\nRS: {}",
            score(0),
            score(1),
            score(2)
        ))
    }

    fn id(&self) -> String {
        "mock-hash-judge".to_string()
    }
}

fn normalize_for_lookup(text: &str) -> String {
    normalize_tokens(text).join(" ")
}

/// Scripted judge that knows the true target label of every counterfactual
/// and scores 4 when the label shown in the prompt matches it, 1 otherwise.
/// This is the protocol's discriminative ceiling: honest sets average 4.0,
/// corrupted sets 1.0.
pub struct TruthfulOracleJudge {
    truths: HashMap<String, String>,
}

impl TruthfulOracleJudge {
    /// `truths` maps counterfactual text to its true target label.
    pub fn new(truths: impl IntoIterator<Item = (String, String)>) -> Self {
        TruthfulOracleJudge {
            truths: truths
                .into_iter()
                .map(|(text, label)| (normalize_for_lookup(&text), label))
                .collect(),
        }
    }
}

impl ChatClient for TruthfulOracleJudge {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let find_last = |prefix: &str| {
            prompt
                .lines()
                .rev()
                .find_map(|line| line.trim().strip_prefix(prefix))
                .map(str::trim)
        };
        let cf_text = find_last("Counterfactual: ").ok_or_else(|| {
            ProviderError::Protocol("judge prompt lacks a Counterfactual line".into())
        })?;
        let shown = find_last("Proposed label: ").ok_or_else(|| {
            ProviderError::Protocol("judge prompt lacks a Proposed label line".into())
        })?;
        let truth = self
            .truths
            .get(&normalize_for_lookup(cf_text))
            .ok_or_else(|| ProviderError::ScriptMiss(normalize_for_lookup(cf_text)))?;
        let score = if truth.eq_ignore_ascii_case(shown) { 4 } else { 1 };
        Ok(format!("FL: {score}\nUA: {score}\nRS: {score}"))
    }

    fn id(&self) -> String {
        "mock-oracle-judge".to_string()
    }
}

/// Wraps a chat client and counts calls. Used to assert cache idempotence.
pub struct CallCounter<C> {
    inner: C,
    calls: Arc<AtomicUsize>,
}

impl<C> CallCounter<C> {
    pub fn new(inner: C) -> Self {
        CallCounter {
            inner,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn calls_handle(&self) -> Arc<AtomicUsize> {
        self.calls.clone()
    }
}

impl<C: ChatClient> ChatClient for CallCounter<C> {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

type FakeResult = Result<(u16, String), String>;

/// Transport with a scripted response schedule, for retry tests.
pub struct FakeTransport {
    schedule: Mutex<VecDeque<FakeResult>>,
    default: Option<FakeResult>,
    calls: AtomicUsize,
}

impl FakeTransport {
    pub fn with_schedule(schedule: Vec<FakeResult>) -> Self {
        FakeTransport {
            schedule: Mutex::new(schedule.into()),
            default: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn always(item: FakeResult) -> Self {
        FakeTransport {
            schedule: Mutex::new(VecDeque::new()),
            default: Some(item),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for FakeTransport {
    fn post_json(
        &self,
        _url: &str,
        _bearer: Option<&str>,
        _body: &Value,
        _timeout: Duration,
    ) -> Result<(u16, String), TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let next = self
            .schedule
            .lock()
            .expect("schedule poisoned")
            .pop_front()
            .or_else(|| self.default.clone());
        match next.expect("fake transport schedule exhausted") {
            Ok(pair) => Ok(pair),
            Err(message) => Err(TransportError::Network(message)),
        }
    }
}
