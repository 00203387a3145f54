//! Uniform clients for the four external capabilities the pipeline
//! consumes: chat completion, text embedding, token-level scoring and text
//! classification.
//!
//! Each capability is a small trait with an HTTP implementation (see
//! [`openai`]) and deterministic offline mocks (see [`mock`]). Responses
//! can be memoized through the append-only disk cache in [`cache`], which
//! is what makes long batch runs resumable: re-invoking with the same
//! request returns the stored record instead of re-calling the endpoint.

pub mod cache;
pub mod mock;
pub mod openai;
pub mod transport;

use crate::corpus::Task;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failure: {0}")]
    Auth(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("no scripted response for digest {0}")]
    ScriptMiss(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cache io: {0}")]
    Cache(String),
}

/// Call parameters shared by all provider clients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding the bearer token. Empty
    /// means the endpoint is unauthenticated.
    #[serde(default)]
    pub auth_env_var: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_refusal_markers")]
    pub refusal_markers: Vec<String>,
}

fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_output_tokens() -> u32 {
    512
}
fn default_parallelism() -> usize {
    1
}

/// Phrases that mark a provider-side refusal. Matched case-insensitively
/// near the start of the response so legitimate counterfactual content
/// further in cannot trip the check.
pub fn default_refusal_markers() -> Vec<String> {
    [
        "i cannot",
        "i can't",
        "i am unable",
        "i'm unable",
        "i must decline",
        "i won't be able",
        "cannot assist",
        "cannot comply",
        "not able to comply",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: String::new(),
            model_name: String::new(),
            auth_env_var: String::new(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            parallelism: default_parallelism(),
            refusal_markers: default_refusal_markers(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.parallelism < 1 {
            return Err(ProviderError::Config("parallelism must be >= 1".into()));
        }
        if self.temperature < 0.0 {
            return Err(ProviderError::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-token conditional log-probabilities for a scored text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprobs {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

impl TokenLogprobs {
    /// Validates the shape: equal lengths, at least one token, every
    /// log-probability finite and `<= 0`.
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self, ProviderError> {
        if tokens.len() != logprobs.len() {
            return Err(ProviderError::Protocol(format!(
                "token/logprob length mismatch: {} vs {}",
                tokens.len(),
                logprobs.len()
            )));
        }
        if tokens.is_empty() {
            return Err(ProviderError::Protocol(
                "scorer returned no tokens for non-empty text".into(),
            ));
        }
        for lp in &logprobs {
            if !lp.is_finite() || *lp > 0.0 {
                return Err(ProviderError::Protocol(format!(
                    "log-probability {lp} is not a finite non-positive value"
                )));
            }
        }
        Ok(TokenLogprobs { tokens, logprobs })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A fixed-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::Protocol(
                "embedding contains a non-finite value".into(),
            ));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// What a classification endpoint is asked to label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassifyPayload {
    Text { text: String },
    Pair { premise: String, hypothesis: String },
}

impl ClassifyPayload {
    pub fn text(text: impl Into<String>) -> Self {
        ClassifyPayload::Text { text: text.into() }
    }
}

/// A classifier's answer, normalized to the task's canonical label names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPrediction {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
}

impl ClassifierPrediction {
    /// Validate a raw endpoint answer against the task: the label must
    /// case-fold to a member of the label set, scores (when present) must
    /// be finite, and the label must be the argmax of the scores with ties
    /// resolved in label-set order.
    pub fn validated(
        raw_label: &str,
        scores: Option<BTreeMap<String, f64>>,
        task: &Task,
    ) -> Result<Self, ProviderError> {
        let label = task
            .match_label(raw_label)
            .ok_or_else(|| {
                ProviderError::Protocol(format!(
                    "label {raw_label:?} is not in the task label set {:?}",
                    task.labels
                ))
            })?
            .to_string();
        if let Some(scores) = &scores {
            if scores.values().any(|v| !v.is_finite()) {
                return Err(ProviderError::Protocol(
                    "classifier scores contain a non-finite value".into(),
                ));
            }
            let mut best: Option<(&str, f64)> = None;
            for candidate in &task.labels {
                if let Some(&score) = scores.get(candidate) {
                    // Strictly-greater keeps the earliest label on ties.
                    if best.is_none_or(|(_, b)| score > b) {
                        best = Some((candidate, score));
                    }
                }
            }
            if let Some((argmax, _)) = best {
                if argmax != label {
                    return Err(ProviderError::Protocol(format!(
                        "classifier label {label:?} disagrees with score argmax {argmax:?}"
                    )));
                }
            }
        }
        Ok(ClassifierPrediction { label, scores })
    }
}

/// Outcome of a chat completion: either model text or a recognized refusal.
/// Refusals are ordinary data because some models decline whole task
/// families and those attempts must be counted, not crashed on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChatOutcome {
    Text(String),
    Refusal(String),
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
    /// Stable identity used in cache digests, e.g. `openai-chat/gpt-4`.
    fn id(&self) -> String;
}

pub trait EmbeddingClient: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
    fn id(&self) -> String;
}

pub trait ScoringClient: Send + Sync {
    fn score_tokens(&self, text: &str) -> Result<TokenLogprobs, ProviderError>;
    fn id(&self) -> String;
}

pub trait ClassifierClient: Send + Sync {
    fn classify(&self, payload: &ClassifyPayload, task: &Task)
        -> Result<ClassifierPrediction, ProviderError>;
    fn id(&self) -> String;
}

impl<T: ChatClient + ?Sized> ChatClient for Box<T> {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        (**self).complete(prompt)
    }
    fn id(&self) -> String {
        (**self).id()
    }
}

impl<T: EmbeddingClient + ?Sized> EmbeddingClient for Box<T> {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed(texts)
    }
    fn id(&self) -> String {
        (**self).id()
    }
}

impl<T: ScoringClient + ?Sized> ScoringClient for Box<T> {
    fn score_tokens(&self, text: &str) -> Result<TokenLogprobs, ProviderError> {
        (**self).score_tokens(text)
    }
    fn id(&self) -> String {
        (**self).id()
    }
}

impl<T: ClassifierClient + ?Sized> ClassifierClient for Box<T> {
    fn classify(
        &self,
        payload: &ClassifyPayload,
        task: &Task,
    ) -> Result<ClassifierPrediction, ProviderError> {
        (**self).classify(payload, task)
    }
    fn id(&self) -> String {
        (**self).id()
    }
}

// Refusal markers are only meaningful near the start of a response.
const REFUSAL_WINDOW: usize = 160;

pub fn is_refusal(text: &str, markers: &[String]) -> bool {
    let head: String = text
        .trim_start()
        .chars()
        .take(REFUSAL_WINDOW)
        .collect::<String>()
        .to_lowercase();
    markers
        .iter()
        .any(|m| !m.is_empty() && head.contains(&m.to_lowercase()))
}

/// Complete a prompt and classify the result as text or refusal.
pub fn chat_complete(
    client: &dyn ChatClient,
    prompt: &str,
    refusal_markers: &[String],
) -> Result<ChatOutcome, ProviderError> {
    if prompt.is_empty() {
        return Err(ProviderError::EmptyInput("prompt"));
    }
    let text = client.complete(prompt)?;
    if is_refusal(&text, refusal_markers) {
        Ok(ChatOutcome::Refusal(text))
    } else {
        Ok(ChatOutcome::Text(text))
    }
}

/// Embed a batch, enforcing the order-preserving one-vector-per-input
/// contract and a uniform dimension.
pub fn embed(
    client: &dyn EmbeddingClient,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>, ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::EmptyInput("embedding batch"));
    }
    let vectors = client.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(ProviderError::Protocol(format!(
            "expected {} embeddings, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    let dim = vectors[0].dim();
    for v in &vectors {
        if v.dim() != dim {
            return Err(ProviderError::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
    }
    Ok(vectors)
}

pub fn score_tokens(client: &dyn ScoringClient, text: &str) -> Result<TokenLogprobs, ProviderError> {
    if text.is_empty() {
        return Err(ProviderError::EmptyInput("text to score"));
    }
    client.score_tokens(text)
}

pub fn classify(
    client: &dyn ClassifierClient,
    payload: &ClassifyPayload,
    task: &Task,
) -> Result<ClassifierPrediction, ProviderError> {
    client.classify(payload, task)
}

/// Run `f` over `items` with at most `parallelism` worker threads,
/// returning results in input order regardless of completion order.
pub fn run_parallel<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len().max(1));
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= items.len() {
                    break;
                }
                let result = f(&items[idx]);
                *slots[idx].lock().expect("result slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("result slot poisoned")
                .expect("worker finished without storing a result")
        })
        .collect()
}
