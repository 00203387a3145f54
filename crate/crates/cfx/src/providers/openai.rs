//! HTTP clients speaking the OpenAI-compatible JSON shapes.
//!
//! Chat uses `/chat/completions`, embeddings `/embeddings`, token scoring
//! the legacy `/completions` endpoint with `echo` + `logprobs` (the shape
//! served by vLLM and llama.cpp for scoring a fixed text). Classification
//! is a plain JSON POST to the configured URL:
//! `{"text": ...}` or `{"premise": ..., "hypothesis": ...}` in,
//! `{"label": ..., "scores": {...}}` out.

use super::transport::{post_with_retries, RetryPolicy, Transport};
use super::{
    ChatClient, ClassifierClient, ClassifierPrediction, ClassifyPayload, EmbeddingClient,
    EmbeddingVector, ProviderConfig, ProviderError, ScoringClient, TokenLogprobs,
};
use crate::corpus::Task;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

fn bearer_token(cfg: &ProviderConfig) -> Result<Option<String>, ProviderError> {
    if cfg.auth_env_var.is_empty() {
        return Ok(None);
    }
    match std::env::var(&cfg.auth_env_var) {
        Ok(token) if !token.is_empty() => Ok(Some(token)),
        _ => Err(ProviderError::Auth(format!(
            "environment variable {} is not set",
            cfg.auth_env_var
        ))),
    }
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

fn parse_json(body: &str) -> Result<Value, ProviderError> {
    serde_json::from_str(body)
        .map_err(|e| ProviderError::Protocol(format!("response is not JSON: {e}")))
}

struct HttpCore {
    cfg: ProviderConfig,
    transport: Arc<dyn Transport>,
    policy: RetryPolicy,
}

impl HttpCore {
    fn new(cfg: ProviderConfig, transport: Arc<dyn Transport>) -> Self {
        let policy = RetryPolicy::new(cfg.max_retries);
        HttpCore {
            cfg,
            transport,
            policy,
        }
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value, ProviderError> {
        let bearer = bearer_token(&self.cfg)?;
        let (text, _retries) = post_with_retries(
            self.transport.as_ref(),
            url,
            bearer.as_deref(),
            body,
            Duration::from_secs(self.cfg.timeout_secs),
            self.policy,
        )?;
        parse_json(&text)
    }
}

pub struct OpenAiChatClient {
    core: HttpCore,
}

impl OpenAiChatClient {
    pub fn new(cfg: ProviderConfig, transport: Arc<dyn Transport>) -> Self {
        OpenAiChatClient {
            core: HttpCore::new(cfg, transport),
        }
    }

    /// Shrink backoff delays; used by tests with scripted transports.
    pub fn with_base_delay(mut self, delay: Duration) -> Self {
        self.core.policy = self.core.policy.with_base_delay(delay);
        self
    }
}

impl ChatClient for OpenAiChatClient {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let cfg = &self.core.cfg;
        let body = json!({
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_output_tokens,
        });
        let url = endpoint(&cfg.base_url, "chat/completions");
        let response = self.core.post(&url, &body)?;
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                ProviderError::Protocol("chat response lacks choices[0].message.content".into())
            })
    }

    fn id(&self) -> String {
        format!("openai-chat/{}", self.core.cfg.model_name)
    }
}

pub struct OpenAiEmbeddingClient {
    core: HttpCore,
}

impl OpenAiEmbeddingClient {
    pub fn new(cfg: ProviderConfig, transport: Arc<dyn Transport>) -> Self {
        OpenAiEmbeddingClient {
            core: HttpCore::new(cfg, transport),
        }
    }
}

impl EmbeddingClient for OpenAiEmbeddingClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyInput("embedding batch"));
        }
        let cfg = &self.core.cfg;
        let body = json!({ "model": cfg.model_name, "input": texts });
        let url = endpoint(&cfg.base_url, "embeddings");
        let response = self.core.post(&url, &body)?;
        let data = response["data"]
            .as_array()
            .ok_or_else(|| ProviderError::Protocol("embeddings response lacks data".into()))?;
        if data.len() != texts.len() {
            return Err(ProviderError::Protocol(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        // Order by the index field; providers may stream out of order.
        let mut indexed: Vec<(usize, EmbeddingVector)> = Vec::with_capacity(data.len());
        for item in data {
            let index = item["index"].as_u64().unwrap_or(indexed.len() as u64) as usize;
            let values: Vec<f64> = item["embedding"]
                .as_array()
                .ok_or_else(|| ProviderError::Protocol("embedding is not an array".into()))?
                .iter()
                .map(|v| v.as_f64().unwrap_or(f64::NAN))
                .collect();
            indexed.push((index, EmbeddingVector::new(values)?));
        }
        indexed.sort_by_key(|(i, _)| *i);
        Ok(indexed.into_iter().map(|(_, v)| v).collect())
    }

    fn id(&self) -> String {
        format!("openai-embed/{}", self.core.cfg.model_name)
    }
}

pub struct OpenAiLogprobScorer {
    core: HttpCore,
}

impl OpenAiLogprobScorer {
    pub fn new(cfg: ProviderConfig, transport: Arc<dyn Transport>) -> Self {
        OpenAiLogprobScorer {
            core: HttpCore::new(cfg, transport),
        }
    }
}

impl ScoringClient for OpenAiLogprobScorer {
    fn score_tokens(&self, text: &str) -> Result<TokenLogprobs, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::EmptyInput("text to score"));
        }
        let cfg = &self.core.cfg;
        let body = json!({
            "model": cfg.model_name,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let url = endpoint(&cfg.base_url, "completions");
        let response = self.core.post(&url, &body)?;
        let lp = &response["choices"][0]["logprobs"];
        if lp.is_null() {
            return Err(ProviderError::Config(
                "endpoint does not return logprobs; configure a logprob-capable provider".into(),
            ));
        }
        let tokens = lp["tokens"]
            .as_array()
            .ok_or_else(|| ProviderError::Protocol("logprobs.tokens missing".into()))?;
        let values = lp["token_logprobs"]
            .as_array()
            .ok_or_else(|| ProviderError::Protocol("logprobs.token_logprobs missing".into()))?;
        if tokens.len() != values.len() {
            return Err(ProviderError::Protocol(
                "logprobs.tokens and token_logprobs lengths differ".into(),
            ));
        }
        // The first echoed token has no context, so providers send null for
        // it; conditional values start after the leading nulls.
        let mut out_tokens = Vec::new();
        let mut out_logprobs = Vec::new();
        for (token, value) in tokens.iter().zip(values) {
            if value.is_null() {
                if !out_logprobs.is_empty() {
                    return Err(ProviderError::Protocol(
                        "null logprob after the first token".into(),
                    ));
                }
                continue;
            }
            let mut lp_value = value
                .as_f64()
                .ok_or_else(|| ProviderError::Protocol("logprob is not a number".into()))?;
            // Engines occasionally emit +epsilon on near-certain tokens.
            if lp_value > 0.0 && lp_value < 1e-6 {
                lp_value = 0.0;
            }
            out_tokens.push(
                token
                    .as_str()
                    .ok_or_else(|| ProviderError::Protocol("token is not a string".into()))?
                    .to_string(),
            );
            out_logprobs.push(lp_value);
        }
        TokenLogprobs::new(out_tokens, out_logprobs)
    }

    fn id(&self) -> String {
        format!("openai-logprobs/{}", self.core.cfg.model_name)
    }
}

/// Minimal JSON classifier endpoint client.
pub struct HttpClassifier {
    core: HttpCore,
}

impl HttpClassifier {
    pub fn new(cfg: ProviderConfig, transport: Arc<dyn Transport>) -> Self {
        HttpClassifier {
            core: HttpCore::new(cfg, transport),
        }
    }
}

impl ClassifierClient for HttpClassifier {
    fn classify(
        &self,
        payload: &ClassifyPayload,
        task: &Task,
    ) -> Result<ClassifierPrediction, ProviderError> {
        let body = serde_json::to_value(payload).expect("payload serializes");
        let response = self.core.post(&self.core.cfg.base_url, &body)?;
        let label = response["label"]
            .as_str()
            .ok_or_else(|| ProviderError::Protocol("classifier response lacks label".into()))?;
        let scores = match response.get("scores") {
            Some(Value::Object(map)) => {
                let mut scores = BTreeMap::new();
                for (key, value) in map {
                    let value = value.as_f64().ok_or_else(|| {
                        ProviderError::Protocol(format!("score for {key:?} is not a number"))
                    })?;
                    scores.insert(key.clone(), value);
                }
                Some(scores)
            }
            _ => None,
        };
        ClassifierPrediction::validated(label, scores, task)
    }

    fn id(&self) -> String {
        format!("http-classifier/{}", self.core.cfg.model_name)
    }
}
