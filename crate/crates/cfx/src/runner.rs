//! Pipeline orchestration behind the CLI subcommands.
//!
//! Every command works inside a run directory: providers cache responses
//! under `cache/`, record files land next to them, and rendered tables go
//! to `reports/`. A manifest records the config digest, seed and tool
//! version, and a lock file keeps concurrent runs out of one directory.
//! Re-running `report` only reads stored records; it never contacts a
//! provider.

use crate::analysis::{
    augment_export, correlate_accuracy, correlate_judge, AccuracyTable, AnalysisError,
    JudgeAggregate,
};
use crate::config::{
    build_chat, build_classifier, build_embedder, build_scorer, ConfigError, RunConfig, TaskSpec,
};
use crate::corpus::{
    self, duplicate_ids_across, load_dataset, CorpusError, DatasetSplit, EditedField,
    FactualInstance, SplitName, TaskKind,
};
use crate::generation::{
    default_target, generate_cf, load_run, success_rate, write_run, CounterfactualRecord,
    GenerationError, GenerationRun, PromptTemplate,
};
use crate::judge::{
    classification_accuracy, classify_mode, copy_paste_rate, corrupt_label, judge_cf,
    load_judge_records, score_distribution, write_judge_records, Aspect, CorruptionMode,
    JudgeClassification, JudgeError, JudgeRecord, JudgeTemplate,
};
use crate::metrics::{flip_percentage, pair_similarity, perplexity, ExclusionCounts, IntrinsicReport, MetricsError};
use crate::providers::cache::{
    CachedChat, CachedClassifier, CachedEmbedding, CachedScoring, ResponseCache,
};
use crate::providers::transport::{Transport, UreqTransport};
use crate::providers::{
    run_parallel, ChatClient, ClassifierClient, EmbeddingClient, ProviderError, ScoringClient,
};
use crate::report::{
    augmentation_table, correlation_table, intrinsic_table, judge_table, Cell, ReportTable,
};
use crate::retrieval::{build_index, load_index, nearest_demo, write_index, RetrievalError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("run directory {0} is locked by another run")]
    Locked(String),
    #[error("{0}")]
    Usage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Exclusive ownership of a run directory for the duration of a command.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(out_dir: &Path) -> Result<Self, RunnerError> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let path = out_dir.join(".cfx.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "pid={}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(RunnerError::Locked(out_dir.display().to_string()))
            }
            Err(source) => Err(RunnerError::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Everything a command needs: the parsed config, effective seed and
/// output directory, and the transport shared by HTTP providers.
pub struct RunContext {
    pub config: RunConfig,
    pub config_digest: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub transport: Arc<dyn Transport>,
}

impl RunContext {
    pub fn new(
        config_path: &Path,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<Self, RunnerError> {
        let (config, config_digest) = RunConfig::load(config_path)?;
        let seed = seed_override.unwrap_or(config.seed);
        let out_dir = out_override.unwrap_or_else(|| config.out_dir.clone());
        Ok(RunContext {
            config,
            config_digest,
            seed,
            out_dir,
            transport: Arc::new(UreqTransport),
        })
    }

    fn write_manifest(&self, command: &str) -> Result<(), RunnerError> {
        fs::create_dir_all(&self.out_dir).map_err(io_err(&self.out_dir))?;
        let manifest = json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config_digest": self.config_digest,
            "seed": self.seed,
            "command": command,
        });
        let path = self.out_dir.join("manifest.json");
        fs::write(&path, format!("{manifest}\n")).map_err(io_err(&path))
    }

    fn cache(&self, name: &str) -> Result<Arc<ResponseCache>, RunnerError> {
        let path = self.out_dir.join("cache").join(format!("{name}.jsonl"));
        Ok(Arc::new(ResponseCache::open(&path)?))
    }

    fn chat(&self, name: &str) -> Result<Box<dyn ChatClient>, RunnerError> {
        let spec = self.config.provider(name)?;
        let inner = build_chat(name, spec, self.transport.clone())?;
        Ok(Box::new(CachedChat::new(inner, self.cache(name)?)))
    }

    fn embedder(&self, name: &str) -> Result<Box<dyn EmbeddingClient>, RunnerError> {
        let spec = self.config.provider(name)?;
        let inner = build_embedder(name, spec, self.transport.clone())?;
        Ok(Box::new(CachedEmbedding::new(inner, self.cache(name)?)))
    }

    fn scorer(&self, name: &str) -> Result<Box<dyn ScoringClient>, RunnerError> {
        let spec = self.config.provider(name)?;
        let inner = build_scorer(name, spec, self.transport.clone())?;
        Ok(Box::new(CachedScoring::new(inner, self.cache(name)?)))
    }

    fn classifier(&self, name: &str) -> Result<Box<dyn ClassifierClient>, RunnerError> {
        let spec = self.config.provider(name)?;
        let inner = build_classifier(name, spec, self.transport.clone())?;
        Ok(Box::new(CachedClassifier::new(inner, self.cache(name)?)))
    }

    fn split_path(&self, split: SplitName) -> Result<&PathBuf, RunnerError> {
        let path = match split {
            SplitName::Train => &self.config.data.train,
            SplitName::Validation => &self.config.data.validation,
            SplitName::Test => &self.config.data.test,
        };
        path.as_ref()
            .ok_or_else(|| RunnerError::Usage(format!("config has no path for the {split} split")))
    }

    fn load_split(&self, split: SplitName) -> Result<DatasetSplit, RunnerError> {
        let path = self.split_path(split)?;
        Ok(load_dataset(path, &self.config.task(), split)?)
    }

    fn generation_template(&self) -> Result<PromptTemplate, RunnerError> {
        match &self.config.templates.generation {
            Some(path) => Ok(PromptTemplate::from_toml_file(path)?),
            None => Ok(PromptTemplate::default()),
        }
    }

    fn judge_template(&self) -> Result<JudgeTemplate, RunnerError> {
        match &self.config.templates.judge {
            Some(path) => Ok(JudgeTemplate::from_toml_file(path)?),
            None => Ok(JudgeTemplate::default()),
        }
    }

    fn reports_dir(&self) -> Result<PathBuf, RunnerError> {
        let dir = self.out_dir.join("reports");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    fn table_meta(&self, table: ReportTable) -> ReportTable {
        table
            .with_meta("seed", &self.seed.to_string())
            .with_meta("config_digest", &self.config_digest)
            .with_meta("tool_version", env!("CARGO_PKG_VERSION"))
    }
}

/// Standalone dataset validation: load with the task and report counts.
pub fn validate_files(dataset: &Path, task_file: &Path) -> Result<String, RunnerError> {
    let task = TaskSpec::from_toml_file(task_file)?.to_task()?;
    let split = load_dataset(dataset, &task, SplitName::Test)?;
    Ok(format!(
        "ok: {} instances, task {} with labels [{}]",
        split.len(),
        task.kind,
        task.labels.join(", ")
    ))
}

/// Config-wide validation: every configured split loads, ids stay disjoint
/// across splits, and reference counterfactuals pair up.
pub fn cmd_validate(ctx: &RunContext) -> Result<String, RunnerError> {
    let task = ctx.config.task();
    let mut lines = Vec::new();
    let mut splits = Vec::new();
    for split in [SplitName::Train, SplitName::Validation, SplitName::Test] {
        let has_path = match split {
            SplitName::Train => ctx.config.data.train.is_some(),
            SplitName::Validation => ctx.config.data.validation.is_some(),
            SplitName::Test => ctx.config.data.test.is_some(),
        };
        if !has_path {
            continue;
        }
        let loaded = ctx.load_split(split)?;
        lines.push(format!("{split}: {} instances", loaded.len()));
        splits.push(loaded);
    }
    let refs: Vec<&DatasetSplit> = splits.iter().collect();
    let dups = duplicate_ids_across(&refs);
    if !dups.is_empty() {
        return Err(RunnerError::Usage(format!(
            "ids shared across splits: {}",
            dups.join(", ")
        )));
    }
    if let Some(path) = &ctx.config.data.reference_cfs {
        let cfs = load_run(path)?;
        let validation = splits
            .iter()
            .find(|s| s.name == SplitName::Validation)
            .ok_or_else(|| {
                RunnerError::Usage("reference_cfs configured without a validation split".into())
            })?;
        let violations = corpus::validate_pairing(validation, &cfs.records, &task);
        if !violations.is_empty() {
            let rendered: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(RunnerError::Usage(format!(
                "reference counterfactuals fail pairing checks: {}",
                rendered.join("; ")
            )));
        }
        lines.push(format!("reference_cfs: {} records, pairing ok", cfs.records.len()));
    }
    Ok(lines.join("\n"))
}

pub struct GenerateArgs {
    pub generator: String,
    pub split: SplitName,
    pub dataset_override: Option<PathBuf>,
    pub edited_field: Option<EditedField>,
}

/// Retrieve a demonstration per instance, prompt the generator, parse, and
/// write the run file. Returns a one-line summary with the success rate.
pub fn cmd_generate(ctx: &RunContext, args: &GenerateArgs) -> Result<String, RunnerError> {
    let _lock = LockGuard::acquire(&ctx.out_dir)?;
    ctx.write_manifest(&format!("generate --generator {}", args.generator))?;
    let task = ctx.config.task();

    match (task.kind, args.edited_field) {
        (TaskKind::PairText, None) => {
            return Err(RunnerError::Usage(
                "pair-text tasks need --edited-field premise|hypothesis".into(),
            ))
        }
        (TaskKind::SingleText, Some(_)) => {
            return Err(RunnerError::Usage(
                "--edited-field only applies to pair-text tasks".into(),
            ))
        }
        _ => {}
    }

    let template = ctx.generation_template()?;
    let embedder = ctx.embedder("embedder")?;
    let chat = ctx.chat(&args.generator)?;
    let spec = ctx.config.provider(&args.generator)?;
    let refusal_markers = spec.config.refusal_markers.clone();
    let parallelism = spec.config.parallelism;

    // The demonstration pool: validation factuals with their human
    // counterfactuals, embedded once and reused across runs.
    let index_path = ctx.out_dir.join("index.jsonl");
    let index = if index_path.exists() {
        load_index(&index_path)?
    } else {
        let reference = ctx.load_split(SplitName::Validation)?;
        let cf_path = ctx.config.data.reference_cfs.as_ref().ok_or_else(|| {
            RunnerError::Usage("config has no data.reference_cfs for demonstrations".into())
        })?;
        let human = load_run(cf_path)?;
        let built = build_index(&reference, &human.records, embedder.as_ref())?;
        write_index(&built, &index_path)?;
        built
    };

    let queries = match &args.dataset_override {
        Some(path) => load_dataset(path, &task, args.split)?,
        None => ctx.load_split(args.split)?,
    };

    let work: Vec<(FactualInstance, String)> = queries
        .instances
        .iter()
        .map(|instance| {
            default_target(&task, &instance.label).map(|t| (instance.clone(), t))
        })
        .collect::<Result<_, _>>()?;

    let outcomes = run_parallel(&work, parallelism, |(query, target)| {
        let demo = match nearest_demo(&index, query, Some(target), embedder.as_ref()) {
            Ok(demo) => demo,
            Err(error) => {
                // Embedding failures are provider outcomes: record, move on.
                return Ok(CounterfactualRecord {
                    cf_id: format!("{}~{}", query.id, target),
                    factual_id: query.id.clone(),
                    generator: args.generator.clone(),
                    target_label: target.clone(),
                    text: String::new(),
                    edited_field: args.edited_field,
                    counterpart: args
                        .edited_field
                        .and_then(|f| query.field(f.other()))
                        .map(str::to_string),
                    parse_status: crate::generation::ParseStatus::TransportFailure,
                    raw_response: format!("retrieval failure: {error}"),
                });
            }
        };
        generate_cf(
            chat.as_ref(),
            &refusal_markers,
            &template,
            &demo,
            query,
            target,
            args.edited_field,
            &args.generator,
            &task,
        )
    });
    let mut records = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        records.push(outcome?);
    }
    records.sort_by(|a, b| a.cf_id.cmp(&b.cf_id));

    let run = GenerationRun {
        run_id: format!("{}-{}-{}", args.generator, args.split, ctx.seed),
        generator: args.generator.clone(),
        dataset: ctx.config.dataset_name.clone(),
        edited_field_policy: args
            .edited_field
            .map_or("whole_text".to_string(), |f| f.to_string()),
        seed: ctx.seed,
        records,
    };
    let out = ctx
        .out_dir
        .join(format!("cfs_{}_{}.jsonl", args.generator, args.split));
    write_run(&run, &out)?;
    let rate = success_rate(&run)?;
    Ok(format!(
        "generated {} records ({} ok, success rate {:.2}%) -> {}",
        run.records.len(),
        run.records.iter().filter(|r| r.is_ok()).count(),
        rate,
        out.display()
    ))
}

/// Per-record intrinsic evaluation, stored so reports can re-render
/// without touching providers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub cf_id: String,
    pub prediction: String,
    pub flip: bool,
    /// Normalized token distance; absent when the factual has no tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    pub ppl: f64,
}

/// Aggregate stored evaluation records into the intrinsic report.
pub fn intrinsic_from_evals(
    run: &GenerationRun,
    evals: &[EvalRecord],
    dataset: &str,
) -> IntrinsicReport {
    let mut excluded = ExclusionCounts::default();
    for record in &run.records {
        if !record.is_ok() {
            excluded.count_status(record.parse_status);
        }
    }
    let flips: Vec<bool> = evals.iter().map(|e| e.flip).collect();
    let ts_values: Vec<f64> = evals.iter().filter_map(|e| e.ts).collect();
    excluded.zero_token_factual = evals.len() - ts_values.len();
    let ts = if ts_values.is_empty() {
        None
    } else {
        Some(ts_values.iter().sum::<f64>() / ts_values.len() as f64)
    };
    let ppl = if evals.is_empty() {
        None
    } else {
        Some(evals.iter().map(|e| e.ppl).sum::<f64>() / evals.len() as f64)
    };
    IntrinsicReport {
        generator: run.generator.clone(),
        dataset: dataset.to_string(),
        n_ok: evals.len(),
        ppl,
        ts,
        fr: flip_percentage(&flips),
        excluded,
    }
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), RunnerError> {
    let mut out = Vec::new();
    for item in items {
        out.extend_from_slice(serde_json::to_string(item).expect("serializes").as_bytes());
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

fn load_eval_records(path: &Path) -> Result<Vec<EvalRecord>, RunnerError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(&line).map_err(|e| RunnerError::Usage(
            format!("{}:{}: bad eval record: {e}", path.display(), idx + 1),
        ))?;
        records.push(record);
    }
    Ok(records)
}

/// Evaluate a counterfactual file: classify every parsed record, score its
/// perplexity, compute normalized distances, store per-record evals and
/// render the intrinsic table.
pub fn cmd_eval(ctx: &RunContext, cfs: &Path, split: SplitName) -> Result<String, RunnerError> {
    let _lock = LockGuard::acquire(&ctx.out_dir)?;
    ctx.write_manifest(&format!("eval --cfs {}", cfs.display()))?;
    let task = ctx.config.task();
    let run = load_run(cfs)?;
    let factuals = ctx.load_split(split)?;

    let classifier = ctx.classifier("classifier")?;
    let scorer = ctx.scorer("scorer")?;
    let spec = ctx.config.provider("classifier")?;
    let parallelism = spec.config.parallelism;

    let mut units: Vec<(&CounterfactualRecord, &FactualInstance)> = Vec::new();
    for record in run.records.iter().filter(|r| r.is_ok()) {
        let factual = factuals
            .get(&record.factual_id)
            .ok_or_else(|| MetricsError::UnknownFactual {
                cf_id: record.cf_id.clone(),
                factual_id: record.factual_id.clone(),
            })?;
        units.push((record, factual));
    }
    if units.is_empty() {
        return Err(MetricsError::NoOkRecords.into());
    }

    let outcomes = run_parallel(&units, parallelism, |(cf, factual)| -> Result<EvalRecord, RunnerError> {
        let payload = crate::metrics::classify_payload(cf, factual)?;
        let prediction = classifier
            .classify(&payload, &task)
            .map_err(|source| MetricsError::ClassifierFailed {
                cf_id: cf.cf_id.clone(),
                source,
            })?;
        let logprobs = scorer
            .score_tokens(&cf.text)
            .map_err(|source| MetricsError::ScorerFailed {
                cf_id: cf.cf_id.clone(),
                source,
            })?;
        let factual_text = factual
            .editable_text(cf.edited_field)
            .ok_or_else(|| MetricsError::ShapeMismatch {
                cf_id: cf.cf_id.clone(),
            })?;
        Ok(EvalRecord {
            cf_id: cf.cf_id.clone(),
            flip: prediction.label.eq_ignore_ascii_case(&cf.target_label),
            prediction: prediction.label,
            ts: pair_similarity(factual_text, &cf.text),
            ppl: perplexity(&logprobs)?,
        })
    });
    let mut evals = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        evals.push(outcome?);
    }
    evals.sort_by(|a, b| a.cf_id.cmp(&b.cf_id));

    let eval_path = ctx
        .out_dir
        .join(format!("eval_{}_{}.jsonl", run.generator, split));
    write_jsonl(&evals, &eval_path)?;

    let report = intrinsic_from_evals(&run, &evals, &ctx.config.dataset_name);
    let table = ctx.table_meta(intrinsic_table(std::slice::from_ref(&report)));
    let reports = ctx.reports_dir()?;
    table
        .write_files(&reports.join("intrinsic"))
        .map_err(io_err(&reports))?;

    let mut summary = format!(
        "evaluated {} records: PPL {} TS {} FR {} (excluded: {} violation, {} refusal, {} transport)",
        report.n_ok,
        report.ppl.map_or("—".into(), |v| format!("{v:.2}")),
        report.ts.map_or("—".into(), |v| format!("{v:.2}")),
        report.fr.map_or("—".into(), |v| format!("{v:.2}")),
        report.excluded.template_violation,
        report.excluded.refusal,
        report.excluded.transport_failure,
    );

    // Pair tasks also get the degenerate-output check.
    if task.kind == TaskKind::PairText {
        let rate = copy_paste_rate(units.iter().map(|(cf, f)| (*f, *cf)))?;
        if let Some(rate) = rate {
            let mut table = ReportTable::new("copy_paste", &["generator", "pct_copy_paste", "n"]);
            table.push_row(vec![
                Cell::Text(run.generator.clone()),
                Cell::Num(rate),
                Cell::Int(units.len() as u64),
            ]);
            let table = ctx.table_meta(table);
            table
                .write_files(&reports.join("copy_paste"))
                .map_err(io_err(&reports))?;
            summary.push_str(&format!("; copy-paste rate {rate:.2}%"));
        }
    }

    Ok(summary)
}

pub struct JudgeArgs {
    pub cfs: PathBuf,
    pub judge: String,
    pub mode: CorruptionMode,
    pub aspects: Vec<Aspect>,
    pub classify: bool,
    pub split: SplitName,
}

/// Run the judge over every parsed counterfactual, honest or corrupted,
/// write the records and render the distribution table.
pub fn cmd_judge(ctx: &RunContext, args: &JudgeArgs) -> Result<String, RunnerError> {
    let _lock = LockGuard::acquire(&ctx.out_dir)?;
    ctx.write_manifest(&format!("judge --judge {} --mode {}", args.judge, args.mode))?;
    let task = ctx.config.task();
    let run = load_run(&args.cfs)?;
    let factuals = ctx.load_split(args.split)?;
    let template = ctx.judge_template()?;
    let chat = ctx.chat(&args.judge)?;
    let spec = ctx.config.provider(&args.judge)?;
    let parallelism = spec.config.parallelism;

    // A judge scoring its own generator's output deserves a flag in the
    // log; scores may be biased toward its own generations.
    let self_judging = args.judge == run.generator
        || (!spec.config.model_name.is_empty()
            && ctx
                .config
                .provider(&run.generator)
                .map(|g| g.config.model_name == spec.config.model_name)
                .unwrap_or(false));
    if self_judging {
        eprintln!(
            "cfx: note: judge {} and generator {} appear to be the same model",
            args.judge, run.generator
        );
    }

    let mut units: Vec<(&CounterfactualRecord, &FactualInstance, String)> = Vec::new();
    for record in run.records.iter().filter(|r| r.is_ok()) {
        let factual = factuals
            .get(&record.factual_id)
            .ok_or_else(|| MetricsError::UnknownFactual {
                cf_id: record.cf_id.clone(),
                factual_id: record.factual_id.clone(),
            })?;
        let shown = match args.mode {
            CorruptionMode::Honest => record.target_label.clone(),
            CorruptionMode::Corrupted => {
                corrupt_label(&task, &factual.label, &record.target_label, ctx.seed)?
            }
        };
        units.push((record, factual, shown));
    }
    if units.is_empty() {
        return Err(MetricsError::NoOkRecords.into());
    }

    if args.classify {
        let outcomes = run_parallel(&units, parallelism, |(cf, factual, _)| {
            classify_mode(chat.as_ref(), &template, factual, cf, &task)
        });
        let mut records: Vec<JudgeClassification> = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            records.push(outcome?);
        }
        records.sort_by(|a, b| a.cf_id.cmp(&b.cf_id));
        let path = ctx.out_dir.join(format!("judge_cls_{}.jsonl", args.judge));
        write_jsonl(&records, &path)?;
        let accuracy = classification_accuracy(
            records
                .iter()
                .zip(&units)
                .map(|(record, (cf, _, _))| (record, cf.target_label.as_str())),
        );
        let mut table = ReportTable::new("judge_classification", &["judge", "n", "accuracy"]);
        table.push_row(vec![
            Cell::Text(args.judge.clone()),
            Cell::Int(records.len() as u64),
            Cell::num_opt(accuracy),
        ]);
        let table = ctx.table_meta(table);
        let reports = ctx.reports_dir()?;
        table
            .write_files(&reports.join("judge_classification"))
            .map_err(io_err(&reports))?;
        return Ok(format!(
            "classified {} records, accuracy {}",
            records.len(),
            accuracy.map_or("—".into(), |v| format!("{v:.2}%"))
        ));
    }

    let outcomes = run_parallel(&units, parallelism, |(cf, factual, shown)| {
        judge_cf(chat.as_ref(), &template, factual, cf, shown, args.mode, &args.aspects)
    });
    let mut records: Vec<JudgeRecord> = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        records.push(outcome?);
    }
    records.sort_by(|a, b| a.cf_id.cmp(&b.cf_id));
    let path = ctx
        .out_dir
        .join(format!("judge_{}_{}.jsonl", args.judge, args.mode));
    write_judge_records(&records, &path)?;

    let n_failed = records
        .iter()
        .filter(|r| r.parse_status != crate::judge::JudgeStatus::Ok)
        .count();
    let mut rows = Vec::new();
    for aspect in &args.aspects {
        let dist = score_distribution(&records, *aspect)?;
        rows.push((args.mode.to_string(), aspect.name().to_string(), dist, n_failed));
    }
    let table = ctx.table_meta(judge_table(&rows));
    let reports = ctx.reports_dir()?;
    table
        .write_files(&reports.join(format!("judge_{}", args.mode)))
        .map_err(io_err(&reports))?;

    let rendered: Vec<String> = rows
        .iter()
        .map(|(_, aspect, dist, _)| format!("{aspect} avg {:.2}", dist.avg))
        .collect();
    Ok(format!(
        "judged {} records ({}; {} failed) -> {}",
        records.len(),
        rendered.join(", "),
        n_failed,
        path.display()
    ))
}

/// Merge originals with parsed counterfactuals into a training file.
pub fn cmd_augment(
    ctx: &RunContext,
    train_override: Option<&Path>,
    cfs: &Path,
    out_file: &Path,
) -> Result<String, RunnerError> {
    let _lock = LockGuard::acquire(&ctx.out_dir)?;
    ctx.write_manifest(&format!("augment --cfs {}", cfs.display()))?;
    let task = ctx.config.task();
    let train = match train_override {
        Some(path) => load_dataset(path, &task, SplitName::Train)?,
        None => ctx.load_split(SplitName::Train)?,
    };
    let run = load_run(cfs)?;
    let export = augment_export(&train, &run.records, &task, ctx.seed)?;
    let split = DatasetSplit {
        name: SplitName::Train,
        instances: export.instances.clone(),
    };
    corpus::write_dataset_file(&split, out_file)?;
    Ok(format!(
        "augmented dataset: {} original + {} counterfactual = {} records ({} excluded) -> {}",
        export.n_original,
        export.n_cf,
        export.instances.len(),
        export.n_excluded,
        out_file.display()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Intrinsic,
    Judge,
    Correlation,
    Augmentation,
}

impl std::str::FromStr for ReportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intrinsic" => Ok(ReportKind::Intrinsic),
            "judge" => Ok(ReportKind::Judge),
            "correlation" => Ok(ReportKind::Correlation),
            "augmentation" => Ok(ReportKind::Augmentation),
            other => Err(format!(
                "unknown report kind {other:?} (expected intrinsic|judge|correlation|augmentation)"
            )),
        }
    }
}

#[derive(Debug, Default)]
pub struct ReportInputs {
    pub cfs: Option<PathBuf>,
    pub evals: Option<PathBuf>,
    pub records: Vec<PathBuf>,
    pub intrinsic: Option<PathBuf>,
    pub accuracies: Option<PathBuf>,
    pub judge_scores: Option<PathBuf>,
    pub test_set: Option<String>,
    pub generators: Option<Vec<String>>,
}

/// Re-render reports from stored record files. Never contacts a provider.
pub fn cmd_report(ctx: &RunContext, kind: ReportKind, inputs: &ReportInputs) -> Result<String, RunnerError> {
    let _lock = LockGuard::acquire(&ctx.out_dir)?;
    ctx.write_manifest("report")?;
    let reports = ctx.reports_dir()?;
    match kind {
        ReportKind::Intrinsic => {
            let cfs = inputs
                .cfs
                .as_ref()
                .ok_or_else(|| RunnerError::Usage("report --kind intrinsic needs --cfs".into()))?;
            let evals = inputs
                .evals
                .as_ref()
                .ok_or_else(|| RunnerError::Usage("report --kind intrinsic needs --evals".into()))?;
            let run = load_run(cfs)?;
            let eval_records = load_eval_records(evals)?;
            let report = intrinsic_from_evals(&run, &eval_records, &ctx.config.dataset_name);
            let table = ctx.table_meta(intrinsic_table(&[report]));
            table
                .write_files(&reports.join("intrinsic"))
                .map_err(io_err(&reports))?;
            Ok(format!("wrote {}", reports.join("intrinsic.csv").display()))
        }
        ReportKind::Judge => {
            if inputs.records.is_empty() {
                return Err(RunnerError::Usage(
                    "report --kind judge needs at least one --records file".into(),
                ));
            }
            let mut rows = Vec::new();
            for path in &inputs.records {
                let records = load_judge_records(path)?;
                let n_failed = records
                    .iter()
                    .filter(|r| r.parse_status != crate::judge::JudgeStatus::Ok)
                    .count();
                let set = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_else(|| "records".to_string());
                for aspect in Aspect::ALL {
                    if let Ok(dist) = score_distribution(&records, aspect) {
                        rows.push((set.clone(), aspect.name().to_string(), dist, n_failed));
                    }
                }
            }
            let table = ctx.table_meta(judge_table(&rows));
            table
                .write_files(&reports.join("judge"))
                .map_err(io_err(&reports))?;
            Ok(format!("wrote {}", reports.join("judge.csv").display()))
        }
        ReportKind::Correlation => {
            let accuracies_path = inputs.accuracies.as_ref().ok_or_else(|| {
                RunnerError::Usage("report --kind correlation needs --accuracies".into())
            })?;
            let intrinsic_csv = inputs.intrinsic.as_ref().ok_or_else(|| {
                RunnerError::Usage(
                    "report --kind correlation needs --intrinsic <intrinsic.csv>".into(),
                )
            })?;
            let intrinsic = read_intrinsic_csv(intrinsic_csv)?;
            let table = AccuracyTable::from_csv_file(accuracies_path)?;
            let include: Option<BTreeSet<String>> = inputs
                .generators
                .as_ref()
                .map(|gens| gens.iter().cloned().collect());

            let mut rows = Vec::new();
            let test_sets = match &inputs.test_set {
                Some(name) => vec![name.clone()],
                None => table.test_sets(),
            };
            for test_set in &test_sets {
                let subset = table.for_test_set(test_set);
                let mut computed = correlate_accuracy(&intrinsic, &subset, include.as_ref())?;
                for row in &mut computed {
                    row.pairing = format!("{} [{}]", row.pairing, test_set);
                }
                rows.extend(computed);
            }
            if let Some(path) = &inputs.judge_scores {
                let aggregates = read_judge_scores_csv(path)?;
                rows.extend(correlate_judge(&intrinsic, &aggregates, include.as_ref())?);
            }
            let table = ctx.table_meta(correlation_table(&rows));
            table
                .write_files(&reports.join("correlation"))
                .map_err(io_err(&reports))?;
            Ok(format!("wrote {}", reports.join("correlation.csv").display()))
        }
        ReportKind::Augmentation => {
            let accuracies_path = inputs.accuracies.as_ref().ok_or_else(|| {
                RunnerError::Usage("report --kind augmentation needs --accuracies".into())
            })?;
            let table = AccuracyTable::from_csv_file(accuracies_path)?;
            let table = ctx.table_meta(augmentation_table(&table));
            table
                .write_files(&reports.join("augmentation"))
                .map_err(io_err(&reports))?;
            Ok(format!("wrote {}", reports.join("augmentation.csv").display()))
        }
    }
}

/// Read back an intrinsic CSV written by [`intrinsic_table`].
pub fn read_intrinsic_csv(path: &Path) -> Result<Vec<IntrinsicReport>, RunnerError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut reports = Vec::new();
    let mut saw_header = false;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "generator,dataset,n_ok,PPL,TS,FR,n_violation,n_refusal,n_transport" {
                return Err(RunnerError::Usage(format!(
                    "{}:{}: unexpected intrinsic header {line:?}",
                    path.display(),
                    idx + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(RunnerError::Usage(format!(
                "{}:{}: expected 9 fields, got {}",
                path.display(),
                idx + 1,
                fields.len()
            )));
        }
        let num = |s: &str| -> Option<f64> {
            if s == crate::report::ABSENT {
                None
            } else {
                s.parse().ok()
            }
        };
        let count = |s: &str| s.parse::<usize>().unwrap_or(0);
        reports.push(IntrinsicReport {
            generator: fields[0].to_string(),
            dataset: fields[1].to_string(),
            n_ok: count(fields[2]),
            ppl: num(fields[3]),
            ts: num(fields[4]),
            fr: num(fields[5]),
            excluded: ExclusionCounts {
                template_violation: count(fields[6]),
                refusal: count(fields[7]),
                transport_failure: count(fields[8]),
                zero_token_factual: 0,
            },
        });
    }
    Ok(reports)
}

/// Read a `generator,FL,UA,RS` CSV of judge aspect means.
pub fn read_judge_scores_csv(path: &Path) -> Result<Vec<JudgeAggregate>, RunnerError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "generator,FL,UA,RS" {
                return Err(RunnerError::Usage(format!(
                    "{}:{}: expected header generator,FL,UA,RS",
                    path.display(),
                    idx + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(RunnerError::Usage(format!(
                "{}:{}: expected 4 fields",
                path.display(),
                idx + 1
            )));
        }
        let parse = |s: &str| -> Result<f64, RunnerError> {
            s.trim().parse().map_err(|e| {
                RunnerError::Usage(format!("{}:{}: bad score: {e}", path.display(), idx + 1))
            })
        };
        rows.push(JudgeAggregate {
            generator: fields[0].trim().to_string(),
            fl: parse(fields[1])?,
            ua: parse(fields[2])?,
            rs: parse(fields[3])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::ParseStatus;

    fn ok_record(cf_id: &str) -> CounterfactualRecord {
        CounterfactualRecord {
            cf_id: cf_id.to_string(),
            factual_id: "f".into(),
            generator: "gen".into(),
            target_label: "negative".into(),
            text: "x".into(),
            edited_field: None,
            counterpart: None,
            parse_status: ParseStatus::Ok,
            raw_response: String::new(),
        }
    }

    #[test]
    fn eval_aggregation_counts_exclusions() {
        let mut records = vec![ok_record("a"), ok_record("b")];
        records.push(CounterfactualRecord {
            parse_status: ParseStatus::Refusal,
            ..ok_record("c")
        });
        let run = GenerationRun {
            run_id: "r".into(),
            generator: "gen".into(),
            dataset: "d".into(),
            edited_field_policy: "whole_text".into(),
            seed: 0,
            records,
        };
        let evals = vec![
            EvalRecord {
                cf_id: "a".into(),
                prediction: "negative".into(),
                flip: true,
                ts: Some(0.25),
                ppl: 2.0,
            },
            EvalRecord {
                cf_id: "b".into(),
                prediction: "positive".into(),
                flip: false,
                ts: Some(0.75),
                ppl: 4.0,
            },
        ];
        let report = intrinsic_from_evals(&run, &evals, "d");
        assert_eq!(report.n_ok, 2);
        assert_eq!(report.fr, Some(50.0));
        assert_eq!(report.ts, Some(0.5));
        assert_eq!(report.ppl, Some(3.0));
        assert_eq!(report.excluded.refusal, 1);
    }

    #[test]
    fn lock_guard_excludes_second_run() {
        let dir = tempfile::tempdir().unwrap();
        let first = LockGuard::acquire(dir.path()).unwrap();
        assert!(matches!(
            LockGuard::acquire(dir.path()),
            Err(RunnerError::Locked(_))
        ));
        drop(first);
        assert!(LockGuard::acquire(dir.path()).is_ok());
    }

    #[test]
    fn intrinsic_csv_roundtrip() {
        let report = IntrinsicReport {
            generator: "gen".into(),
            dataset: "sa".into(),
            n_ok: 7,
            ppl: Some(49.53),
            ts: Some(0.16),
            fr: None,
            excluded: ExclusionCounts {
                template_violation: 2,
                refusal: 1,
                transport_failure: 0,
                zero_token_factual: 0,
            },
        };
        let table = intrinsic_table(std::slice::from_ref(&report));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("intrinsic.csv");
        std::fs::write(&path, table.to_csv()).unwrap();
        let loaded = read_intrinsic_csv(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].generator, "gen");
        assert_eq!(loaded[0].ppl, Some(49.53));
        assert_eq!(loaded[0].fr, None);
        assert_eq!(loaded[0].excluded.template_violation, 2);
    }
}
