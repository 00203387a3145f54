//! Command-line surface: `validate`, `generate`, `eval`, `judge`,
//! `augment`, `report`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print
//! a single machine-parseable line to stderr.

use crate::corpus::{EditedField, SplitName};
use crate::judge::{Aspect, CorruptionMode};
use crate::runner::{
    self, GenerateArgs, JudgeArgs, ReportInputs, ReportKind, RunContext, RunnerError,
};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "cfx",
    version,
    about = "Generate counterfactual text with few-shot step-by-step prompting and evaluate it"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output location: the run directory, or the output file for augment
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<SplitName, String> {
    match s {
        "train" => Ok(SplitName::Train),
        "validation" => Ok(SplitName::Validation),
        "test" => Ok(SplitName::Test),
        other => Err(format!("unknown split {other:?} (train|validation|test)")),
    }
}

fn parse_field(s: &str) -> Result<EditedField, String> {
    match s {
        "premise" => Ok(EditedField::Premise),
        "hypothesis" => Ok(EditedField::Hypothesis),
        other => Err(format!("unknown field {other:?} (premise|hypothesis)")),
    }
}

fn parse_mode(s: &str) -> Result<CorruptionMode, String> {
    match s {
        "honest" => Ok(CorruptionMode::Honest),
        "corrupted" => Ok(CorruptionMode::Corrupted),
        other => Err(format!("unknown mode {other:?} (honest|corrupted)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check datasets against a task definition
    Validate {
        #[command(flatten)]
        common: Common,
        /// Dataset file to check (with --task); otherwise the config's data
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Task definition file (with --dataset)
        #[arg(long)]
        task: Option<PathBuf>,
    },
    /// Generate counterfactuals for a split
    Generate {
        #[command(flatten)]
        common: Common,
        /// Provider entry to use as the generator
        #[arg(long)]
        generator: String,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitName,
        /// Override the split's dataset file
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Which side of a pair instance to edit
        #[arg(long, value_parser = parse_field)]
        edited_field: Option<EditedField>,
    },
    /// Compute intrinsic metrics over a counterfactual file
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cfs: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitName,
    },
    /// Score counterfactuals with a judge model
    Judge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cfs: PathBuf,
        /// Provider entry to use as the judge
        #[arg(long)]
        judge: String,
        #[arg(long, default_value = "honest", value_parser = parse_mode)]
        mode: CorruptionMode,
        /// Aspects to score, comma separated
        #[arg(long, default_value = "FL,UA,RS")]
        aspects: String,
        /// Ask for the label instead of aspect scores
        #[arg(long)]
        classify: bool,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitName,
    },
    /// Merge originals with counterfactuals into a training file
    Augment {
        #[command(flatten)]
        common: Common,
        /// Original training data (defaults to the config's train split)
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        cfs: PathBuf,
    },
    /// Render report tables from stored records
    Report {
        #[command(flatten)]
        common: Common,
        /// intrinsic|judge|correlation|augmentation
        #[arg(long)]
        kind: String,
        #[arg(long)]
        cfs: Option<PathBuf>,
        #[arg(long)]
        evals: Option<PathBuf>,
        /// Judge record files (repeatable)
        #[arg(long)]
        records: Vec<PathBuf>,
        /// Intrinsic CSV produced by eval
        #[arg(long)]
        intrinsic: Option<PathBuf>,
        /// External accuracy table (generator,test_set,accuracy)
        #[arg(long)]
        accuracies: Option<PathBuf>,
        /// Judge aspect means (generator,FL,UA,RS)
        #[arg(long)]
        judge_scores: Option<PathBuf>,
        /// Restrict correlations to one test set
        #[arg(long)]
        test_set: Option<String>,
        /// Only include these generators, comma separated
        #[arg(long)]
        generators: Option<String>,
    },
}

fn context(common: &Common) -> Result<RunContext, RunnerError> {
    let config = common
        .config
        .as_ref()
        .ok_or_else(|| RunnerError::Usage("this command needs --config".into()))?;
    RunContext::new(config, common.seed, common.out.clone())
}

fn parse_aspects(s: &str) -> Result<Vec<Aspect>, RunnerError> {
    let mut aspects = Vec::new();
    for part in s.split(',') {
        let aspect = Aspect::parse(part)
            .ok_or_else(|| RunnerError::Usage(format!("unknown aspect {part:?} (FL|UA|RS)")))?;
        if !aspects.contains(&aspect) {
            aspects.push(aspect);
        }
    }
    Ok(aspects)
}

fn run(cli: Cli) -> Result<String, RunnerError> {
    match cli.command {
        Command::Validate {
            common,
            dataset,
            task,
        } => match (dataset, task) {
            (Some(dataset), Some(task)) => runner::validate_files(&dataset, &task),
            (None, None) => runner::cmd_validate(&context(&common)?),
            _ => Err(RunnerError::Usage(
                "validate needs either both --dataset and --task, or --config".into(),
            )),
        },
        Command::Generate {
            common,
            generator,
            split,
            dataset,
            edited_field,
        } => {
            let ctx = context(&common)?;
            runner::cmd_generate(
                &ctx,
                &GenerateArgs {
                    generator,
                    split,
                    dataset_override: dataset,
                    edited_field,
                },
            )
        }
        Command::Eval { common, cfs, split } => {
            let ctx = context(&common)?;
            runner::cmd_eval(&ctx, &cfs, split)
        }
        Command::Judge {
            common,
            cfs,
            judge,
            mode,
            aspects,
            classify,
            split,
        } => {
            let ctx = context(&common)?;
            runner::cmd_judge(
                &ctx,
                &JudgeArgs {
                    cfs,
                    judge,
                    mode,
                    aspects: parse_aspects(&aspects)?,
                    classify,
                    split,
                },
            )
        }
        Command::Augment { common, train, cfs } => {
            let out_file = common
                .out
                .clone()
                .ok_or_else(|| RunnerError::Usage("augment needs --out <output file>".into()))?;
            let config = common
                .config
                .as_ref()
                .ok_or_else(|| RunnerError::Usage("this command needs --config".into()))?;
            // --out names the augmented dataset here; lock and record the
            // run in the directory receiving it.
            let run_dir = out_file
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map(Path::to_path_buf);
            let ctx = RunContext::new(config, common.seed, run_dir)?;
            runner::cmd_augment(&ctx, train.as_deref(), &cfs, &out_file)
        }
        Command::Report {
            common,
            kind,
            cfs,
            evals,
            records,
            intrinsic,
            accuracies,
            judge_scores,
            test_set,
            generators,
        } => {
            let ctx = context(&common)?;
            let kind = ReportKind::from_str(&kind).map_err(RunnerError::Usage)?;
            let inputs = ReportInputs {
                cfs,
                evals,
                records,
                intrinsic,
                accuracies,
                judge_scores,
                test_set,
                generators: generators
                    .map(|list| list.split(',').map(|s| s.trim().to_string()).collect()),
            };
            runner::cmd_report(&ctx, kind, &inputs)
        }
    }
}

/// Parse arguments and run. Returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(error) => {
            let code = match error.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = error.print();
            return code;
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(error) => {
            let message = error.to_string().replace('\n', "; ");
            eprintln!("cfx: error: {message}");
            match error {
                RunnerError::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}
