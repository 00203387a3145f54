//! Demonstration selection: the reference factual closest to the query in
//! embedding space, paired with its human counterfactual.
//!
//! The scan is exact and exhaustive; reference splits are validation-sized
//! and correctness beats speed here. Cosine similarity is scale-free, so
//! any positive rescaling of the stored vectors leaves the argmax alone.

use crate::corpus::{DatasetSplit, EditedField, FactualInstance, InstanceText};
use crate::generation::CounterfactualRecord;
use crate::providers::{self, EmbeddingClient, ProviderError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("reference split is empty")]
    EmptyReference,
    #[error("reference instance {0} has no human counterfactual")]
    MissingDemo(String),
    #[error("counterfactual {cf_id} references unknown reference instance {factual_id}")]
    UnknownFactual { cf_id: String, factual_id: String },
    #[error("embedding failed: {0}")]
    Embedding(#[from] ProviderError),
    #[error("index file {path}:{line}: {message}")]
    BadIndexFile {
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

/// A worked human example shown in the generation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoPair {
    pub factual: FactualInstance,
    pub counterfactual_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_field: Option<EditedField>,
    pub target_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedDemo {
    pub cf_id: String,
    #[serde(flatten)]
    pub demo: DemoPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub vector: Vec<f64>,
    pub demo: Vec<IndexedDemo>,
}

/// Reference instances with their embeddings and demonstrations, immutable
/// after build.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    entries: Vec<IndexEntry>,
}

/// The text that gets embedded: the raw text for single-text instances,
/// both sides joined with a separator for pairs so neither signal is lost.
pub fn embedding_text(instance: &FactualInstance) -> String {
    match &instance.content {
        InstanceText::Single { text } => text.clone(),
        InstanceText::Pair { premise, hypothesis } => format!("{premise} [SEP] {hypothesis}"),
    }
}

/// Cosine similarity; zero-norm vectors compare as -1 so they lose to any
/// vector with direction.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return -1.0;
    }
    dot / (norm_a * norm_b)
}

impl EmbeddingIndex {
    pub fn new(mut entries: Vec<IndexEntry>) -> Self {
        for entry in &mut entries {
            entry.demo.sort_by(|a, b| a.cf_id.cmp(&b.cf_id));
        }
        EmbeddingIndex { entries }
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The entry maximizing cosine similarity to `query`. Ties break to the
    /// lexicographically smallest instance id.
    pub fn nearest_entry(&self, query: &[f64]) -> Result<&IndexEntry, RetrievalError> {
        let mut best: Option<(f64, &IndexEntry)> = None;
        for entry in &self.entries {
            let sim = cosine_similarity(query, &entry.vector);
            let better = match &best {
                None => true,
                Some((best_sim, best_entry)) => {
                    sim > *best_sim || (sim == *best_sim && entry.id < best_entry.id)
                }
            };
            if better {
                best = Some((sim, entry));
            }
        }
        best.map(|(_, e)| e).ok_or(RetrievalError::EmptyReference)
    }

    /// Pick the demonstration from an entry: prefer one whose target label
    /// matches the request, otherwise the first by counterfactual id.
    pub fn choose_demo<'a>(
        entry: &'a IndexEntry,
        requested_target: Option<&str>,
    ) -> Option<&'a DemoPair> {
        if let Some(target) = requested_target {
            if let Some(hit) = entry.demo.iter().find(|d| d.demo.target_label == target) {
                return Some(&hit.demo);
            }
        }
        entry.demo.first().map(|d| &d.demo)
    }
}

/// Build the index over a reference split: one entry per factual, embedding
/// the matchable text, attaching every human counterfactual of that
/// factual. Every reference instance must have at least one.
pub fn build_index(
    reference: &DatasetSplit,
    human_cfs: &[CounterfactualRecord],
    embedder: &dyn EmbeddingClient,
) -> Result<EmbeddingIndex, RetrievalError> {
    if reference.is_empty() {
        return Err(RetrievalError::EmptyReference);
    }
    let mut by_factual: BTreeMap<&str, Vec<&CounterfactualRecord>> = BTreeMap::new();
    for cf in human_cfs {
        if reference.get(&cf.factual_id).is_none() {
            return Err(RetrievalError::UnknownFactual {
                cf_id: cf.cf_id.clone(),
                factual_id: cf.factual_id.clone(),
            });
        }
        by_factual.entry(&cf.factual_id).or_default().push(cf);
    }

    let texts: Vec<String> = reference.instances.iter().map(embedding_text).collect();
    let vectors = providers::embed(embedder, &texts)?;

    let mut entries = Vec::with_capacity(reference.len());
    for (instance, vector) in reference.instances.iter().zip(vectors) {
        let demos = by_factual
            .get(instance.id.as_str())
            .ok_or_else(|| RetrievalError::MissingDemo(instance.id.clone()))?;
        let demo = demos
            .iter()
            .map(|cf| IndexedDemo {
                cf_id: cf.cf_id.clone(),
                demo: DemoPair {
                    factual: instance.clone(),
                    counterfactual_text: cf.text.clone(),
                    edited_field: cf.edited_field,
                    target_label: cf.target_label.clone(),
                },
            })
            .collect();
        entries.push(IndexEntry {
            id: instance.id.clone(),
            vector: vector.0,
            demo,
        });
    }
    Ok(EmbeddingIndex::new(entries))
}

/// Embed the query and return the demonstration from its nearest reference
/// entry, honoring the requested flip direction when one is given.
pub fn nearest_demo(
    index: &EmbeddingIndex,
    query: &FactualInstance,
    requested_target: Option<&str>,
    embedder: &dyn EmbeddingClient,
) -> Result<DemoPair, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyReference);
    }
    let vectors = providers::embed(embedder, &[embedding_text(query)])?;
    let entry = index.nearest_entry(&vectors[0].0)?;
    EmbeddingIndex::choose_demo(entry, requested_target)
        .cloned()
        .ok_or_else(|| RetrievalError::MissingDemo(entry.id.clone()))
}

/// Persist the index, one entry per line, for reuse across runs.
pub fn write_index(index: &EmbeddingIndex, path: &Path) -> Result<(), RetrievalError> {
    let mut file = File::create(path).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for entry in &index.entries {
        let line = serde_json::to_string(entry).expect("entry serializes");
        file.write_all(line.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|source| RetrievalError::Io {
                path: path.display().to_string(),
                source,
            })?;
    }
    Ok(())
}

pub fn load_index(path: &Path) -> Result<EmbeddingIndex, RetrievalError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| RetrievalError::Io {
        path: display.clone(),
        source,
    })?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RetrievalError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: IndexEntry =
            serde_json::from_str(&line).map_err(|e| RetrievalError::BadIndexFile {
                path: display.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        entries.push(entry);
    }
    Ok(EmbeddingIndex::new(entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SplitName;
    use crate::generation::ParseStatus;
    use crate::providers::mock::LetterFreqEmbedder;
    use proptest::prelude::*;

    fn human_cf(cf_id: &str, factual_id: &str, text: &str, target: &str) -> CounterfactualRecord {
        CounterfactualRecord {
            cf_id: cf_id.to_string(),
            factual_id: factual_id.to_string(),
            generator: "human".to_string(),
            target_label: target.to_string(),
            text: text.to_string(),
            edited_field: None,
            counterpart: None,
            parse_status: ParseStatus::Ok,
            raw_response: String::new(),
        }
    }

    fn reference() -> (DatasetSplit, Vec<CounterfactualRecord>) {
        let split = DatasetSplit {
            name: SplitName::Validation,
            instances: vec![
                FactualInstance::single("v1", "aaa", "positive"),
                FactualInstance::single("v2", "bbb", "positive"),
                FactualInstance::single("v3", "ccc", "positive"),
            ],
        };
        let cfs = vec![
            human_cf("h1", "v1", "zzz", "negative"),
            human_cf("h2", "v2", "yyy", "negative"),
            human_cf("h3", "v3", "xxx", "negative"),
        ];
        (split, cfs)
    }

    #[test]
    fn index_has_one_entry_per_reference_factual() {
        let (split, cfs) = reference();
        let index = build_index(&split, &cfs, &LetterFreqEmbedder).unwrap();
        assert_eq!(index.len(), 3);
    }

    #[test]
    fn missing_demo_names_the_instance() {
        let (split, mut cfs) = reference();
        cfs.pop();
        let err = build_index(&split, &cfs, &LetterFreqEmbedder).unwrap_err();
        match err {
            RetrievalError::MissingDemo(id) => assert_eq!(id, "v3"),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn entry_vectors_match_letter_counts() {
        let (split, cfs) = reference();
        let index = build_index(&split, &cfs, &LetterFreqEmbedder).unwrap();
        // "aaa" embeds as three a's and nothing else.
        let entry = &index.entries()[0];
        assert_eq!(entry.vector[0], 3.0);
        assert_eq!(entry.vector[1..].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn identical_text_is_its_own_nearest() {
        let (split, cfs) = reference();
        let index = build_index(&split, &cfs, &LetterFreqEmbedder).unwrap();
        let query = FactualInstance::single("q", "bbb", "positive");
        let demo = nearest_demo(&index, &query, None, &LetterFreqEmbedder).unwrap();
        assert_eq!(demo.factual.id, "v2");
        assert_eq!(demo.counterfactual_text, "yyy");
    }

    fn manual_index(vectors: &[(&str, Vec<f64>)]) -> EmbeddingIndex {
        EmbeddingIndex::new(
            vectors
                .iter()
                .map(|(id, vector)| IndexEntry {
                    id: id.to_string(),
                    vector: vector.clone(),
                    demo: vec![IndexedDemo {
                        cf_id: format!("{id}-cf"),
                        demo: DemoPair {
                            factual: FactualInstance::single(*id, "t", "positive"),
                            counterfactual_text: "c".to_string(),
                            edited_field: None,
                            target_label: "negative".to_string(),
                        },
                    }],
                })
                .collect(),
        )
    }

    #[test]
    fn cosine_prefers_aligned_vector() {
        let index = manual_index(&[("a", vec![1.0, 0.1]), ("b", vec![0.0, 1.0])]);
        let best = index.nearest_entry(&[1.0, 0.0]).unwrap();
        assert_eq!(best.id, "a");
        // Sanity on the raw values: ~0.995 vs 0.
        assert!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.1]) > 0.99);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn ties_break_to_smaller_id() {
        let index = manual_index(&[("b", vec![1.0, 0.0]), ("a", vec![1.0, 0.0])]);
        assert_eq!(index.nearest_entry(&[2.0, 0.0]).unwrap().id, "a");
    }

    #[test]
    fn zero_norm_vectors_lose() {
        let index = manual_index(&[("zero", vec![0.0, 0.0]), ("dir", vec![-1.0, 0.0])]);
        // Even a negatively aligned vector beats a zero-norm one.
        assert_eq!(index.nearest_entry(&[1.0, 0.0]).unwrap().id, "dir");
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), -1.0);
    }

    #[test]
    fn demo_choice_prefers_requested_target_then_cf_id() {
        let entry = IndexEntry {
            id: "v1".to_string(),
            vector: vec![1.0],
            demo: vec![
                IndexedDemo {
                    cf_id: "b".to_string(),
                    demo: DemoPair {
                        factual: FactualInstance::single("v1", "t", "neutral"),
                        counterfactual_text: "to-contradiction".to_string(),
                        edited_field: None,
                        target_label: "contradiction".to_string(),
                    },
                },
                IndexedDemo {
                    cf_id: "a".to_string(),
                    demo: DemoPair {
                        factual: FactualInstance::single("v1", "t", "neutral"),
                        counterfactual_text: "to-entailment".to_string(),
                        edited_field: None,
                        target_label: "entailment".to_string(),
                    },
                },
            ],
        };
        let index = EmbeddingIndex::new(vec![entry]);
        let entry = &index.entries()[0];
        // Requested target present: the matching demo wins.
        let hit = EmbeddingIndex::choose_demo(entry, Some("contradiction")).unwrap();
        assert_eq!(hit.counterfactual_text, "to-contradiction");
        // No match for the request: first by cf id.
        let fallback = EmbeddingIndex::choose_demo(entry, Some("neutral")).unwrap();
        assert_eq!(fallback.counterfactual_text, "to-entailment");
    }

    #[test]
    fn index_roundtrips_through_file() {
        let (split, cfs) = reference();
        let index = build_index(&split, &cfs, &LetterFreqEmbedder).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        write_index(&index, &path).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(loaded, index);
    }

    proptest! {
        // Cosine is scale-free: rescaling every stored vector by any c > 0
        // leaves the winner unchanged.
        #[test]
        fn argmax_invariant_under_positive_rescaling(
            vectors in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 4),
                2..12
            ),
            query in proptest::collection::vec(-10.0f64..10.0, 4),
            scale in prop_oneof![Just(0.5f64), Just(3.0f64), 0.01f64..100.0],
        ) {
            let entries: Vec<(String, Vec<f64>)> = vectors
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("e{i:03}"), v.clone()))
                .collect();
            let base = manual_index(
                &entries.iter().map(|(id, v)| (id.as_str(), v.clone())).collect::<Vec<_>>()
            );
            let scaled = manual_index(
                &entries
                    .iter()
                    .map(|(id, v)| (id.as_str(), v.iter().map(|x| x * scale).collect()))
                    .collect::<Vec<_>>()
            );
            let a = base.nearest_entry(&query).unwrap().id.clone();
            let b = scaled.nearest_entry(&query).unwrap().id.clone();
            prop_assert_eq!(a, b);
        }

        // The selected entry's similarity is maximal over the whole index.
        #[test]
        fn selected_similarity_dominates(
            vectors in proptest::collection::vec(
                proptest::collection::vec(-5.0f64..5.0, 3),
                1..10
            ),
            query in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let entries: Vec<(String, Vec<f64>)> = vectors
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("e{i:03}"), v.clone()))
                .collect();
            let index = manual_index(
                &entries.iter().map(|(id, v)| (id.as_str(), v.clone())).collect::<Vec<_>>()
            );
            let best = index.nearest_entry(&query).unwrap();
            let best_sim = cosine_similarity(&query, &best.vector);
            for entry in index.entries() {
                prop_assert!(best_sim >= cosine_similarity(&query, &entry.vector));
            }
        }
    }
}
