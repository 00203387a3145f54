//! Run configuration: one human-editable TOML file describing the task,
//! data paths, provider endpoints and templates.
//!
//! Secrets never live in the config; HTTP providers name an environment
//! variable that holds the bearer token. Relative paths resolve against
//! the config file's directory so configs can be committed and moved.

use crate::corpus::{Task, TaskKind};
use crate::providers::mock::{
    HashScoreJudge, LetterFreqEmbedder, LexiconClassifier, LexiconSwapChat, OverlapClassifier,
    RefusalChat, ScriptedChat, UniformScorer,
};
use crate::providers::openai::{
    HttpClassifier, OpenAiChatClient, OpenAiEmbeddingClient, OpenAiLogprobScorer,
};
use crate::providers::transport::Transport;
use crate::providers::{ChatClient, ClassifierClient, EmbeddingClient, ProviderConfig, ScoringClient};
use crate::util::sha256_hex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: config parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("config error: {0}")]
    Invalid(String),
    #[error("no provider named {0:?} in the config")]
    UnknownProvider(String),
    #[error("provider {name:?}: kind {kind:?} cannot serve as a {role} provider")]
    WrongKind {
        name: String,
        kind: String,
        role: &'static str,
    },
    #[error("provider {name:?}: missing setting {setting}")]
    MissingSetting { name: String, setting: &'static str },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn toml_error(path: &Path, text: &str, error: toml::de::Error) -> ConfigError {
    let line = error
        .span()
        .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    ConfigError::Parse {
        path: path.display().to_string(),
        line,
        message: error.message().to_string(),
    }
}

/// Task shape and label set, loadable standalone (`--task sa.toml`) or as
/// the `[task]` section of a run config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub labels: Vec<String>,
}

impl TaskSpec {
    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| toml_error(path, &text, e))
    }

    pub fn to_task(&self) -> Result<Task, ConfigError> {
        Task::new(self.kind, self.labels.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// One provider entry: the backend kind, the shared call parameters, and
/// kind-specific settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub kind: String,
    #[serde(flatten)]
    pub config: ProviderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swaps: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refusal_message: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DataPaths {
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub validation: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Human counterfactuals paired with the validation split; the
    /// demonstration pool.
    #[serde(default)]
    pub reference_cfs: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TemplatePaths {
    #[serde(default)]
    pub generation: Option<PathBuf>,
    #[serde(default)]
    pub judge: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_dataset_name")]
    pub dataset_name: String,
    pub task: TaskSpec,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub templates: TemplatePaths,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderSpec>,
}

fn default_dataset_name() -> String {
    "dataset".to_string()
}

impl RunConfig {
    /// Load and validate a config, returning it with the digest of the
    /// file bytes (recorded in the run manifest).
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let digest = sha256_hex(text.as_bytes());
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| toml_error(path, &text, e))?;
        config.task.to_task()?;
        for (name, spec) in &config.providers {
            spec.config
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("provider {name:?}: {e}")))?;
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok((config, digest))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&path);
                }
            }
        };
        resolve(&mut self.data.train);
        resolve(&mut self.data.validation);
        resolve(&mut self.data.test);
        resolve(&mut self.data.reference_cfs);
        resolve(&mut self.templates.generation);
        resolve(&mut self.templates.judge);
        for spec in self.providers.values_mut() {
            resolve(&mut spec.script);
        }
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
    }

    pub fn task(&self) -> Task {
        self.task.to_task().expect("validated at load")
    }

    pub fn provider(&self, name: &str) -> Result<&ProviderSpec, ConfigError> {
        self.providers
            .get(name)
            .ok_or_else(|| ConfigError::UnknownProvider(name.to_string()))
    }
}

fn require<'a, T>(
    value: &'a Option<T>,
    name: &str,
    setting: &'static str,
) -> Result<&'a T, ConfigError> {
    value.as_ref().ok_or(ConfigError::MissingSetting {
        name: name.to_string(),
        setting,
    })
}

/// Instantiate a chat provider from its spec.
pub fn build_chat(
    name: &str,
    spec: &ProviderSpec,
    transport: Arc<dyn Transport>,
) -> Result<Box<dyn ChatClient>, ConfigError> {
    match spec.kind.as_str() {
        "openai-chat" => Ok(Box::new(OpenAiChatClient::new(spec.config.clone(), transport))),
        "scripted-chat" => {
            let path = require(&spec.script, name, "script")?;
            let chat = ScriptedChat::from_file(path)
                .map_err(|e| ConfigError::Invalid(format!("provider {name:?}: {e}")))?;
            Ok(Box::new(chat))
        }
        "lexicon-swap-chat" => {
            let swaps = require(&spec.swaps, name, "swaps")?;
            Ok(Box::new(LexiconSwapChat::new(
                swaps.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            )))
        }
        "refusal-chat" => Ok(Box::new(match &spec.refusal_message {
            Some(message) => RefusalChat::with_message(message),
            None => RefusalChat::new(),
        })),
        "hash-judge" => Ok(Box::new(HashScoreJudge)),
        other => Err(ConfigError::WrongKind {
            name: name.to_string(),
            kind: other.to_string(),
            role: "chat",
        }),
    }
}

pub fn build_embedder(
    name: &str,
    spec: &ProviderSpec,
    transport: Arc<dyn Transport>,
) -> Result<Box<dyn EmbeddingClient>, ConfigError> {
    match spec.kind.as_str() {
        "openai-embed" => Ok(Box::new(OpenAiEmbeddingClient::new(
            spec.config.clone(),
            transport,
        ))),
        "letter-freq-embed" => Ok(Box::new(LetterFreqEmbedder)),
        other => Err(ConfigError::WrongKind {
            name: name.to_string(),
            kind: other.to_string(),
            role: "embedding",
        }),
    }
}

pub fn build_scorer(
    name: &str,
    spec: &ProviderSpec,
    transport: Arc<dyn Transport>,
) -> Result<Box<dyn ScoringClient>, ConfigError> {
    match spec.kind.as_str() {
        "openai-logprobs" => Ok(Box::new(OpenAiLogprobScorer::new(
            spec.config.clone(),
            transport,
        ))),
        "uniform-scorer" => {
            let vocab = require(&spec.vocab_size, name, "vocab_size")?;
            Ok(Box::new(UniformScorer::new(*vocab)))
        }
        other => Err(ConfigError::WrongKind {
            name: name.to_string(),
            kind: other.to_string(),
            role: "scoring",
        }),
    }
}

pub fn build_classifier(
    name: &str,
    spec: &ProviderSpec,
    transport: Arc<dyn Transport>,
) -> Result<Box<dyn ClassifierClient>, ConfigError> {
    match spec.kind.as_str() {
        "http-classifier" => Ok(Box::new(HttpClassifier::new(spec.config.clone(), transport))),
        "lexicon-classifier" => {
            let weights = require(&spec.weights, name, "weights")?;
            let positive = require(&spec.positive_label, name, "positive_label")?;
            let negative = require(&spec.negative_label, name, "negative_label")?;
            Ok(Box::new(LexiconClassifier::new(
                weights.iter().map(|(k, v)| (k.clone(), *v)).collect(),
                positive.clone(),
                negative.clone(),
            )))
        }
        "overlap-classifier" => Ok(Box::new(OverlapClassifier)),
        other => Err(ConfigError::WrongKind {
            name: name.to_string(),
            kind: other.to_string(),
            role: "classifier",
        }),
    }
}
