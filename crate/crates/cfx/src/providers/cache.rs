//! Append-only response cache.
//!
//! One JSON record per line: `{"digest", "request", "response", "ts"}`.
//! The digest keys (provider identity, payload) so identical requests hit
//! the stored record instead of the endpoint. Writes go through a single
//! writer; records are immutable once appended.

use super::{
    ChatClient, ClassifierClient, ClassifierPrediction, ClassifyPayload, EmbeddingClient,
    EmbeddingVector, ProviderError, ScoringClient, TokenLogprobs,
};
use crate::corpus::Task;
use crate::util::{now_iso8601, sha256_hex};
use serde_json::{json, Value};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

/// Digest for a provider request: provider identity plus canonical payload.
/// `serde_json` orders object keys, so equal payloads digest equally.
pub fn request_digest(client_id: &str, payload: &Value) -> String {
    let canonical = json!({ "client": client_id, "payload": payload });
    sha256_hex(canonical.to_string().as_bytes())
}

pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, Value>>,
    writer: Mutex<File>,
}

impl ResponseCache {
    /// Open (or create) a cache file, loading any existing records.
    pub fn open(path: &Path) -> Result<Self, ProviderError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| ProviderError::Cache(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| ProviderError::Cache(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: Value = serde_json::from_str(&line)
                    .map_err(|e| ProviderError::Cache(format!("corrupt cache line: {e}")))?;
                if let (Some(digest), Some(response)) =
                    (record.get("digest").and_then(Value::as_str), record.get("response"))
                {
                    entries.insert(digest.to_string(), response.clone());
                }
            }
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ProviderError::Cache(e.to_string()))?;
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ProviderError::Cache(e.to_string()))?;
        Ok(ResponseCache {
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn lookup(&self, digest: &str) -> Option<Value> {
        self.entries.lock().expect("cache poisoned").get(digest).cloned()
    }

    pub fn store(&self, digest: &str, request: Value, response: Value) -> Result<(), ProviderError> {
        let record = json!({
            "digest": digest,
            "request": request,
            "response": response,
            "ts": now_iso8601(),
        });
        {
            let mut writer = self.writer.lock().expect("cache writer poisoned");
            writer
                .write_all(record.to_string().as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .map_err(|e| ProviderError::Cache(e.to_string()))?;
        }
        self.entries
            .lock()
            .expect("cache poisoned")
            .insert(digest.to_string(), response);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Chat client with memoized responses.
pub struct CachedChat<C> {
    inner: C,
    cache: Arc<ResponseCache>,
}

impl<C: ChatClient> CachedChat<C> {
    pub fn new(inner: C, cache: Arc<ResponseCache>) -> Self {
        CachedChat { inner, cache }
    }
}

impl<C: ChatClient> ChatClient for CachedChat<C> {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let payload = json!({ "op": "chat", "prompt": prompt });
        let digest = request_digest(&self.inner.id(), &payload);
        if let Some(hit) = self.cache.lookup(&digest) {
            if let Some(text) = hit.as_str() {
                return Ok(text.to_string());
            }
        }
        let text = self.inner.complete(prompt)?;
        self.cache.store(&digest, payload, Value::String(text.clone()))?;
        Ok(text)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

/// Embedding client with per-text memoization, so overlapping batches
/// reuse earlier work.
pub struct CachedEmbedding<C> {
    inner: C,
    cache: Arc<ResponseCache>,
}

impl<C: EmbeddingClient> CachedEmbedding<C> {
    pub fn new(inner: C, cache: Arc<ResponseCache>) -> Self {
        CachedEmbedding { inner, cache }
    }
}

impl<C: EmbeddingClient> EmbeddingClient for CachedEmbedding<C> {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let mut results: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        let mut misses: Vec<usize> = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let payload = json!({ "op": "embed", "text": text });
            let digest = request_digest(&self.inner.id(), &payload);
            match self.cache.lookup(&digest) {
                Some(hit) => {
                    let values: Vec<f64> = serde_json::from_value(hit)
                        .map_err(|e| ProviderError::Cache(format!("corrupt embedding: {e}")))?;
                    results[i] = Some(EmbeddingVector::new(values)?);
                }
                None => misses.push(i),
            }
        }
        if !misses.is_empty() {
            let batch: Vec<String> = misses.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed(&batch)?;
            if fresh.len() != batch.len() {
                return Err(ProviderError::Protocol(format!(
                    "expected {} embeddings, got {}",
                    batch.len(),
                    fresh.len()
                )));
            }
            for (&i, vector) in misses.iter().zip(fresh) {
                let payload = json!({ "op": "embed", "text": &texts[i] });
                let digest = request_digest(&self.inner.id(), &payload);
                self.cache
                    .store(&digest, payload, serde_json::to_value(&vector.0).unwrap())?;
                results[i] = Some(vector);
            }
        }
        Ok(results.into_iter().map(|v| v.expect("slot filled")).collect())
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

pub struct CachedScoring<C> {
    inner: C,
    cache: Arc<ResponseCache>,
}

impl<C: ScoringClient> CachedScoring<C> {
    pub fn new(inner: C, cache: Arc<ResponseCache>) -> Self {
        CachedScoring { inner, cache }
    }
}

impl<C: ScoringClient> ScoringClient for CachedScoring<C> {
    fn score_tokens(&self, text: &str) -> Result<TokenLogprobs, ProviderError> {
        let payload = json!({ "op": "score", "text": text });
        let digest = request_digest(&self.inner.id(), &payload);
        if let Some(hit) = self.cache.lookup(&digest) {
            let lp: TokenLogprobs = serde_json::from_value(hit)
                .map_err(|e| ProviderError::Cache(format!("corrupt logprobs: {e}")))?;
            return Ok(lp);
        }
        let lp = self.inner.score_tokens(text)?;
        self.cache
            .store(&digest, payload, serde_json::to_value(&lp).unwrap())?;
        Ok(lp)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

pub struct CachedClassifier<C> {
    inner: C,
    cache: Arc<ResponseCache>,
}

impl<C: ClassifierClient> CachedClassifier<C> {
    pub fn new(inner: C, cache: Arc<ResponseCache>) -> Self {
        CachedClassifier { inner, cache }
    }
}

impl<C: ClassifierClient> ClassifierClient for CachedClassifier<C> {
    fn classify(
        &self,
        payload: &ClassifyPayload,
        task: &Task,
    ) -> Result<ClassifierPrediction, ProviderError> {
        let request = json!({
            "op": "classify",
            "payload": serde_json::to_value(payload).unwrap(),
            "labels": task.labels,
        });
        let digest = request_digest(&self.inner.id(), &request);
        if let Some(hit) = self.cache.lookup(&digest) {
            let prediction: ClassifierPrediction = serde_json::from_value(hit)
                .map_err(|e| ProviderError::Cache(format!("corrupt prediction: {e}")))?;
            return Ok(prediction);
        }
        let prediction = self.inner.classify(payload, task)?;
        self.cache
            .store(&digest, request, serde_json::to_value(&prediction).unwrap())?;
        Ok(prediction)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}
