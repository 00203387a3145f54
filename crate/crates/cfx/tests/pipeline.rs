//! Full offline pipeline runs through the CLI against the bundled mock
//! fixtures. No network, no external models.

use std::path::{Path, PathBuf};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["cfx"];
    full.extend_from_slice(args);
    cfx::cli::dispatch(full)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn validate_standalone_dataset_and_task() {
    let dataset = fixture("sa/data/test.jsonl");
    let task = fixture("sa/task.toml");
    let code = cli(&[
        "validate",
        "--dataset",
        dataset.to_str().unwrap(),
        "--task",
        task.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
}

#[test]
fn validate_config_checks_all_splits_and_pairing() {
    let config = fixture("sa/config.toml");
    let out = tempfile::tempdir().unwrap();
    let code = cli(&[
        "validate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
}

fn run_sa_pipeline(out_dir: &Path) {
    let config = fixture("sa/config.toml");
    let config = config.to_str().unwrap();
    let out = out_dir.to_str().unwrap();

    assert_eq!(
        cli(&["generate", "--config", config, "--out", out, "--generator", "mock-gen"]),
        0,
        "generate test split"
    );
    let cfs = out_dir.join("cfs_mock-gen_test.jsonl");
    assert_eq!(
        cli(&["eval", "--config", config, "--out", out, "--cfs", cfs.to_str().unwrap()]),
        0,
        "eval"
    );
    for mode in ["honest", "corrupted"] {
        assert_eq!(
            cli(&[
                "judge",
                "--config",
                config,
                "--out",
                out,
                "--cfs",
                cfs.to_str().unwrap(),
                "--judge",
                "judge",
                "--mode",
                mode,
            ]),
            0,
            "judge {mode}"
        );
    }
    assert_eq!(
        cli(&[
            "generate",
            "--config",
            config,
            "--out",
            out,
            "--generator",
            "mock-gen",
            "--split",
            "train",
        ]),
        0,
        "generate train split"
    );
    let train_cfs = out_dir.join("cfs_mock-gen_train.jsonl");
    let augmented = out_dir.join("augmented.jsonl");
    assert_eq!(
        cli(&[
            "augment",
            "--config",
            config,
            "--cfs",
            train_cfs.to_str().unwrap(),
            "--out",
            augmented.to_str().unwrap(),
        ]),
        0,
        "augment"
    );
    assert_eq!(
        cli(&[
            "report",
            "--config",
            config,
            "--out",
            out,
            "--kind",
            "judge",
            "--records",
            out_dir.join("judge_judge_honest.jsonl").to_str().unwrap(),
            "--records",
            out_dir.join("judge_judge_corrupted.jsonl").to_str().unwrap(),
        ]),
        0,
        "report judge"
    );
}

#[test]
fn sa_full_offline_pipeline() {
    let out = tempfile::tempdir().unwrap();
    run_sa_pipeline(out.path());

    for artifact in [
        "manifest.json",
        "index.jsonl",
        "cfs_mock-gen_test.jsonl",
        "eval_mock-gen_test.jsonl",
        "judge_judge_honest.jsonl",
        "judge_judge_corrupted.jsonl",
        "cfs_mock-gen_train.jsonl",
        "augmented.jsonl",
        "reports/intrinsic.csv",
        "reports/intrinsic.md",
        "reports/judge.csv",
    ] {
        assert!(out.path().join(artifact).exists(), "missing {artifact}");
    }

    // 18 of the 20 swapped texts flip the lexicon classifier; the two
    // without lexicon words stay put. The uniform scorer pins PPL at the
    // vocabulary size.
    let intrinsic = read(&out.path().join("reports/intrinsic.csv"));
    let row = intrinsic.lines().last().unwrap();
    assert!(row.starts_with("mock-gen,sa-demo,20,1000.00,"), "row: {row}");
    assert!(row.contains(",90.00,0,0,0"), "row: {row}");

    // The augmented file holds 10 originals plus 10 train counterfactuals.
    let augmented = read(&out.path().join("augmented.jsonl"));
    assert_eq!(augmented.lines().count(), 20);

    // Success rate is part of the run file: header plus 20 ok records.
    let cfs = read(&out.path().join("cfs_mock-gen_test.jsonl"));
    assert_eq!(cfs.lines().count(), 21);
    assert_eq!(cfs.matches("\"parse_status\":\"ok\"").count(), 20);
}

#[test]
fn refusing_generator_yields_refusal_records_not_failures() {
    let config = fixture("sa/config.toml");
    let out = tempfile::tempdir().unwrap();
    let code = cli(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--generator",
        "refuser",
    ]);
    assert_eq!(code, 0, "a refusing provider is an outcome, not a crash");
    let cfs = read(&out.path().join("cfs_refuser_test.jsonl"));
    assert_eq!(cfs.matches("\"parse_status\":\"refusal\"").count(), 20);

    // With zero parsed records the evaluation reports absence by failing.
    let code = cli(&[
        "eval",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--cfs",
        out.path().join("cfs_refuser_test.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn nli_pipeline_edits_premise_and_keeps_hypothesis() {
    let config = fixture("nli/config.toml");
    let config = config.to_str().unwrap();
    let out = tempfile::tempdir().unwrap();
    let out_str = out.path().to_str().unwrap();

    assert_eq!(
        cli(&[
            "generate",
            "--config",
            config,
            "--out",
            out_str,
            "--generator",
            "mock-gen",
            "--edited-field",
            "premise",
        ]),
        0
    );
    let cfs_path = out.path().join("cfs_mock-gen_test.jsonl");
    let cfs = read(&cfs_path);
    // Counterparts are copied verbatim from the factual hypothesis.
    assert_eq!(cfs.matches("\"edited_field\":\"premise\"").count(), 6);
    assert!(cfs.contains("\"counterpart\":\"an animal is moving\""));

    assert_eq!(
        cli(&["eval", "--config", config, "--out", out_str, "--cfs", cfs_path.to_str().unwrap()]),
        0
    );
    // Negated premises against unchanged hypotheses: every flip lands.
    let intrinsic = read(&out.path().join("reports/intrinsic.csv"));
    let row = intrinsic.lines().last().unwrap();
    assert!(row.contains(",100.00,0,0,0"), "row: {row}");
    // No generated premise equals the untouched hypothesis.
    let copy = read(&out.path().join("reports/copy_paste.csv"));
    assert!(copy.lines().last().unwrap().contains("0.00"));

    // Classification mode: the judge is asked for the label itself.
    assert_eq!(
        cli(&[
            "judge",
            "--config",
            config,
            "--out",
            out_str,
            "--cfs",
            cfs_path.to_str().unwrap(),
            "--judge",
            "judge",
            "--classify",
        ]),
        0
    );
    assert!(out.path().join("judge_cls_judge.jsonl").exists());
}

#[test]
fn missing_edited_field_for_pair_task_is_usage_error() {
    let config = fixture("nli/config.toml");
    let out = tempfile::tempdir().unwrap();
    let code = cli(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--generator",
        "mock-gen",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn locked_run_directory_rejects_second_run() {
    let config = fixture("sa/config.toml");
    let out = tempfile::tempdir().unwrap();
    std::fs::write(out.path().join(".cfx.lock"), "pid=0\n").unwrap();
    let code = cli(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--generator",
        "mock-gen",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn report_rerenders_from_stored_records_without_providers() {
    let config = fixture("sa/config.toml");
    let config = config.to_str().unwrap();
    let out = tempfile::tempdir().unwrap();
    let out_str = out.path().to_str().unwrap();

    assert_eq!(
        cli(&["generate", "--config", config, "--out", out_str, "--generator", "mock-gen"]),
        0
    );
    let cfs = out.path().join("cfs_mock-gen_test.jsonl");
    assert_eq!(
        cli(&["eval", "--config", config, "--out", out_str, "--cfs", cfs.to_str().unwrap()]),
        0
    );
    let first = read(&out.path().join("reports/intrinsic.csv"));

    // Wipe the provider caches: report must not need them.
    std::fs::remove_dir_all(out.path().join("cache")).unwrap();
    assert_eq!(
        cli(&[
            "report",
            "--config",
            config,
            "--out",
            out_str,
            "--kind",
            "intrinsic",
            "--cfs",
            cfs.to_str().unwrap(),
            "--evals",
            out.path().join("eval_mock-gen_test.jsonl").to_str().unwrap(),
        ]),
        0
    );
    let second = read(&out.path().join("reports/intrinsic.csv"));
    assert_eq!(first, second);
    assert!(!out.path().join("cache").exists(), "report recreated a provider cache");
}

#[test]
fn correlation_report_from_external_tables() {
    let config = fixture("sa/config.toml");
    let out = tempfile::tempdir().unwrap();
    let out_str = out.path().to_str().unwrap();

    // Stand-in tables as an external trainer would produce them.
    let intrinsic = out.path().join("intrinsic.csv");
    std::fs::write(
        &intrinsic,
        "generator,dataset,n_ok,PPL,TS,FR,n_violation,n_refusal,n_transport\n\
         alpha,sa-demo,20,48.03,0.14,85.66,0,0,0\n\
         beta,sa-demo,20,49.53,0.16,79.51,0,0,0\n\
         gamma,sa-demo,20,49.05,0.29,94.03,0,0,0\n",
    )
    .unwrap();
    let accuracies = out.path().join("accuracies.csv");
    std::fs::write(
        &accuracies,
        "generator,test_set,accuracy\n\
         alpha,original,90.16\n\
         beta,original,89.96\n\
         gamma,original,90.37\n",
    )
    .unwrap();
    let judge_scores = out.path().join("judge_scores.csv");
    std::fs::write(
        &judge_scores,
        "generator,FL,UA,RS\nalpha,3.66,2.95,2.58\nbeta,3.58,2.91,2.65\ngamma,3.79,3.15,2.91\n",
    )
    .unwrap();

    let code = cli(&[
        "report",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_str,
        "--kind",
        "correlation",
        "--intrinsic",
        intrinsic.to_str().unwrap(),
        "--accuracies",
        accuracies.to_str().unwrap(),
        "--judge-scores",
        judge_scores.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let table = read(&out.path().join("reports/correlation.csv"));
    assert!(table.contains("Accuracy & -PPL"));
    assert!(table.contains("Accuracy & -TS"));
    assert!(table.contains("FL & FR"));
    assert!(table.contains("UA & -TS"));
    assert!(table.contains("RS & -PPL"));
}
