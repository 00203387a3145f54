//! Batch toolkit for generating counterfactual text instances with few-shot
//! chain-of-thought prompting and evaluating them.
//!
//! The pipeline runs in stages, each reading and writing line-delimited
//! record files so long batch runs can be interrupted and resumed:
//!
//! 1. [`retrieval`] picks the closest human factual/counterfactual pair to
//!    each query instance (cosine similarity in embedding space).
//! 2. [`generation`] builds the step-by-step prompt around that
//!    demonstration, calls the generator model and parses the templated
//!    answer.
//! 3. [`metrics`] scores parsed counterfactuals with flip rate, normalized
//!    token edit distance and perplexity.
//! 4. [`judge`] runs the scoring protocol (FL/UA/RS on 1..4) against honest
//!    and corrupted label sets, plus the label-classification mode and the
//!    copy-paste detector.
//! 5. [`analysis`] exports augmented training data, computes Spearman
//!    correlations and renders report tables.
//!
//! All external model capabilities (chat, embeddings, token scoring, text
//! classification) are consumed through the [`providers`] interfaces, which
//! ship deterministic offline mocks next to the HTTP clients.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod generation;
pub mod judge;
pub mod metrics;
pub mod providers;
pub mod report;
pub mod retrieval;
pub mod runner;
pub mod util;

pub use corpus::{DatasetSplit, FactualInstance, SplitName, Task, TaskKind};
pub use generation::{CounterfactualRecord, GenerationRun, ParseStatus, PromptTemplate};
pub use providers::{ClassifierPrediction, EmbeddingVector, ProviderConfig, TokenLogprobs};
