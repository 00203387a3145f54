//! Downstream analysis: data-augmentation export, ingestion of external
//! classifier accuracies, and rank correlations between intrinsic metrics,
//! judge scores and accuracies.
//!
//! Classifier training is external by design: this module exports the
//! augmented dataset and reads the resulting accuracies back from a CSV,
//! keeping the toolkit model-agnostic.

use crate::corpus::{DatasetSplit, FactualInstance, InstanceText, Task};
use crate::generation::CounterfactualRecord;
use crate::metrics::IntrinsicReport;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("input lengths differ: {xs} vs {ys}")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("need at least 2 points, got {0}")]
    TooShort(usize),
    #[error("counterfactual {cf_id} carries label {label:?} outside the task label set")]
    LabelMismatch { cf_id: String, label: String },
    #[error("counterfactual {cf_id} references unknown factual {factual_id}")]
    UnknownFactual { cf_id: String, factual_id: String },
    #[error("only {shared} generator(s) shared between inputs; need at least 2")]
    InsufficientOverlap { shared: usize },
    #[error("accuracy table {path}:{line}: {message}")]
    BadAccuracyTable {
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

/// Fractional average ranks (1-based). Tied values share the mean of the
/// rank positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN in ranks"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) hold one tied group.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return None;
    }
    Some(cov / (var_x * var_y).sqrt())
}

/// Spearman rank correlation: Pearson over fractional average ranks.
/// `Ok(None)` means undefined (a constant input); it is reported as
/// missing, never coerced to zero.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(AnalysisError::TooShort(xs.len()));
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// Mean of the three judge aspect scores, the table's "Avg." column.
pub fn average_scores(fl: f64, ua: f64, rs: f64) -> f64 {
    debug_assert!((1.0..=4.0).contains(&fl) && (1.0..=4.0).contains(&ua) && (1.0..=4.0).contains(&rs));
    (fl + ua + rs) / 3.0
}

/// Result of merging originals with counterfactuals for training.
#[derive(Debug, Clone)]
pub struct AugmentedExport {
    pub instances: Vec<FactualInstance>,
    pub n_original: usize,
    pub n_cf: usize,
    /// Records skipped because they had not parsed ok.
    pub n_excluded: usize,
}

/// Merge the original training split with one instance per parsed
/// counterfactual, labeled with its target label, shuffled
/// deterministically by seed.
pub fn augment_export(
    train: &DatasetSplit,
    cfs: &[CounterfactualRecord],
    task: &Task,
    seed: u64,
) -> Result<AugmentedExport, AnalysisError> {
    let mut instances: Vec<FactualInstance> = train.instances.clone();
    let n_original = instances.len();
    let mut n_cf = 0usize;
    let mut n_excluded = 0usize;
    for cf in cfs {
        if !cf.is_ok() {
            n_excluded += 1;
            continue;
        }
        if !task.has_label(&cf.target_label) {
            return Err(AnalysisError::LabelMismatch {
                cf_id: cf.cf_id.clone(),
                label: cf.target_label.clone(),
            });
        }
        let factual = train
            .get(&cf.factual_id)
            .ok_or_else(|| AnalysisError::UnknownFactual {
                cf_id: cf.cf_id.clone(),
                factual_id: cf.factual_id.clone(),
            })?;
        let content = match (&factual.content, cf.edited_field) {
            (InstanceText::Single { .. }, _) => InstanceText::Single {
                text: cf.text.clone(),
            },
            (InstanceText::Pair { hypothesis, .. }, Some(crate::corpus::EditedField::Premise)) => {
                InstanceText::Pair {
                    premise: cf.text.clone(),
                    hypothesis: hypothesis.clone(),
                }
            }
            (InstanceText::Pair { premise, .. }, Some(crate::corpus::EditedField::Hypothesis)) => {
                InstanceText::Pair {
                    premise: premise.clone(),
                    hypothesis: cf.text.clone(),
                }
            }
            (InstanceText::Pair { .. }, None) => {
                return Err(AnalysisError::UnknownFactual {
                    cf_id: cf.cf_id.clone(),
                    factual_id: cf.factual_id.clone(),
                })
            }
        };
        instances.push(FactualInstance {
            id: cf.cf_id.clone(),
            content,
            label: cf.target_label.clone(),
        });
        n_cf += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    instances.shuffle(&mut rng);
    Ok(AugmentedExport {
        instances,
        n_original,
        n_cf,
        n_excluded,
    })
}

/// One externally measured accuracy: a classifier trained with some
/// generator's counterfactuals, evaluated on a named test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub generator: String,
    pub test_set: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    /// Parse the `generator,test_set,accuracy` CSV.
    pub fn from_csv_file(path: &Path) -> Result<Self, AnalysisError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: display.clone(),
            source,
        })?;
        let mut rows = Vec::new();
        let mut seen = BTreeSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if idx == 0 {
                if line != "generator,test_set,accuracy" {
                    return Err(AnalysisError::BadAccuracyTable {
                        path: display,
                        line: line_no,
                        message: format!("expected header generator,test_set,accuracy, got {line:?}"),
                    });
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(AnalysisError::BadAccuracyTable {
                    path: display,
                    line: line_no,
                    message: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let accuracy: f64 = fields[2].trim().parse().map_err(|e| {
                AnalysisError::BadAccuracyTable {
                    path: display.clone(),
                    line: line_no,
                    message: format!("bad accuracy: {e}"),
                }
            })?;
            if !(0.0..=100.0).contains(&accuracy) {
                return Err(AnalysisError::BadAccuracyTable {
                    path: display,
                    line: line_no,
                    message: format!("accuracy {accuracy} outside [0, 100]"),
                });
            }
            let key = (fields[0].trim().to_string(), fields[1].trim().to_string());
            if !seen.insert(key.clone()) {
                return Err(AnalysisError::BadAccuracyTable {
                    path: display,
                    line: line_no,
                    message: format!("duplicate (generator, test_set) pair {key:?}"),
                });
            }
            rows.push(AccuracyRow {
                generator: key.0,
                test_set: key.1,
                accuracy,
            });
        }
        Ok(AccuracyTable { rows })
    }

    pub fn for_test_set(&self, test_set: &str) -> Vec<&AccuracyRow> {
        self.rows.iter().filter(|r| r.test_set == test_set).collect()
    }

    pub fn test_sets(&self) -> Vec<String> {
        let mut sets: Vec<String> = self
            .rows
            .iter()
            .map(|r| r.test_set.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        sets.sort();
        sets
    }
}

/// Mean judge aspect scores for one generator, the judge-side input to the
/// correlation analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeAggregate {
    pub generator: String,
    pub fl: f64,
    pub ua: f64,
    pub rs: f64,
}

/// One correlation cell: a pairing label like `Accuracy & -TS`, the subset
/// it was computed on, and rho (absent when undefined).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub pairing: String,
    pub rho: Option<f64>,
    pub n: usize,
}

// Intersect on generator name, in sorted order so output is deterministic.
fn shared_generators(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Vec<String> {
    a.intersection(b).cloned().collect()
}

fn spearman_or_undefined(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    spearman(xs, ys).ok().flatten()
}

/// Correlate augmentation accuracy with the negated intrinsic metrics over
/// the generators present in both inputs. PPL and TS are negated so that
/// higher is better on both axes.
pub fn correlate_accuracy(
    intrinsic: &[IntrinsicReport],
    accuracies: &[&AccuracyRow],
    include: Option<&BTreeSet<String>>,
) -> Result<Vec<CorrelationRow>, AnalysisError> {
    let keep = |name: &String| include.is_none_or(|set| set.contains(name));
    let from_metrics: BTreeSet<String> = intrinsic
        .iter()
        .map(|r| r.generator.clone())
        .filter(|g| keep(g))
        .collect();
    let from_accuracy: BTreeSet<String> = accuracies
        .iter()
        .map(|r| r.generator.clone())
        .filter(|g| keep(g))
        .collect();
    let shared = shared_generators(&from_metrics, &from_accuracy);
    if shared.len() < 2 {
        return Err(AnalysisError::InsufficientOverlap {
            shared: shared.len(),
        });
    }
    let report_of = |generator: &str| intrinsic.iter().find(|r| r.generator == generator);
    let accuracy_of = |generator: &str| {
        accuracies
            .iter()
            .find(|r| r.generator == generator)
            .map(|r| r.accuracy)
    };

    let mut rows = Vec::new();
    let mut pairing = |label: &str, pick: &dyn Fn(&IntrinsicReport) -> Option<f64>| {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for generator in &shared {
            let (report, accuracy) = match (report_of(generator), accuracy_of(generator)) {
                (Some(r), Some(a)) => (r, a),
                _ => continue,
            };
            if let Some(value) = pick(report) {
                xs.push(accuracy);
                ys.push(-value);
            }
        }
        rows.push(CorrelationRow {
            pairing: label.to_string(),
            rho: spearman_or_undefined(&xs, &ys),
            n: xs.len(),
        });
    };
    pairing("Accuracy & -PPL", &|r| r.ppl);
    pairing("Accuracy & -TS", &|r| r.ts);
    Ok(rows)
}

/// Correlate judge aspect means with the intrinsic metrics: FL with FR,
/// UA with -TS, RS with -PPL.
pub fn correlate_judge(
    intrinsic: &[IntrinsicReport],
    judge: &[JudgeAggregate],
    include: Option<&BTreeSet<String>>,
) -> Result<Vec<CorrelationRow>, AnalysisError> {
    let keep = |name: &String| include.is_none_or(|set| set.contains(name));
    let from_metrics: BTreeSet<String> = intrinsic
        .iter()
        .map(|r| r.generator.clone())
        .filter(|g| keep(g))
        .collect();
    let from_judge: BTreeSet<String> = judge
        .iter()
        .map(|r| r.generator.clone())
        .filter(|g| keep(g))
        .collect();
    let shared = shared_generators(&from_metrics, &from_judge);
    if shared.len() < 2 {
        return Err(AnalysisError::InsufficientOverlap {
            shared: shared.len(),
        });
    }
    let report_of = |generator: &str| intrinsic.iter().find(|r| r.generator == generator);
    let judge_of = |generator: &str| judge.iter().find(|r| r.generator == generator);

    let mut rows = Vec::new();
    let mut pairing = |label: &str,
                       judge_pick: &dyn Fn(&JudgeAggregate) -> f64,
                       metric_pick: &dyn Fn(&IntrinsicReport) -> Option<f64>,
                       negate: bool| {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for generator in &shared {
            let (report, aggregate) = match (report_of(generator), judge_of(generator)) {
                (Some(r), Some(j)) => (r, j),
                _ => continue,
            };
            if let Some(value) = metric_pick(report) {
                xs.push(judge_pick(aggregate));
                ys.push(if negate { -value } else { value });
            }
        }
        rows.push(CorrelationRow {
            pairing: label.to_string(),
            rho: spearman_or_undefined(&xs, &ys),
            n: xs.len(),
        });
    };
    pairing("FL & FR", &|j| j.fl, &|r| r.fr, false);
    pairing("UA & -TS", &|j| j.ua, &|r| r.ts, true);
    pairing("RS & -PPL", &|j| j.rs, &|r| r.ppl, true);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SplitName;
    use crate::generation::ParseStatus;
    use crate::metrics::ExclusionCounts;
    use proptest::prelude::*;

    #[test]
    fn spearman_monotone_and_reversed() {
        let xs = [1.0, 2.0, 3.0, 5.0, 9.0];
        let up = [2.0, 4.0, 5.0, 7.0, 11.0];
        assert_eq!(spearman(&xs, &up).unwrap(), Some(1.0));
        let down: Vec<f64> = up.iter().map(|v| -v).collect();
        assert_eq!(spearman(&xs, &down).unwrap(), Some(-1.0));
    }

    #[test]
    fn spearman_four_point_example() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.0, 1.0, 4.0, 3.0];
        let rho = spearman(&xs, &ys).unwrap().unwrap();
        assert!((rho - 0.6).abs() < 1e-12);
    }

    #[test]
    fn spearman_degenerate_inputs() {
        let constant = [3.0, 3.0, 3.0];
        let varying = [1.0, 2.0, 3.0];
        assert_eq!(spearman(&constant, &varying).unwrap(), None);
        assert!(matches!(
            spearman(&[1.0], &[2.0]),
            Err(AnalysisError::TooShort(1))
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0]),
            Err(AnalysisError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn average_ranks_handle_ties() {
        // 10 and 10 occupy rank positions 2 and 3, so both get 2.5.
        assert_eq!(average_ranks(&[5.0, 10.0, 10.0, 20.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[7.0, 7.0, 7.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn average_scores_examples() {
        let rounded = |v: f64| (v * 100.0).round() / 100.0;
        assert_eq!(rounded(average_scores(3.79, 3.15, 2.91)), 3.28);
        assert_eq!(rounded(average_scores(3.58, 3.88, 3.86)), 3.77);
        assert_eq!(average_scores(4.0, 4.0, 4.0), 4.0);
    }

    fn train_split(n: usize) -> DatasetSplit {
        DatasetSplit {
            name: SplitName::Train,
            instances: (0..n)
                .map(|i| FactualInstance::single(format!("t{i:03}"), format!("text {i}"), "positive"))
                .collect(),
        }
    }

    fn ok_cfs(n: usize) -> Vec<CounterfactualRecord> {
        (0..n)
            .map(|i| CounterfactualRecord {
                cf_id: format!("cf{i:03}"),
                factual_id: format!("t{i:03}"),
                generator: "gen".into(),
                target_label: "negative".into(),
                text: format!("edited {i}"),
                edited_field: None,
                counterpart: None,
                parse_status: ParseStatus::Ok,
                raw_response: String::new(),
            })
            .collect()
    }

    #[test]
    fn augment_cardinality() {
        let train = train_split(100);
        let cfs = ok_cfs(80);
        let export = augment_export(&train, &cfs, &Task::sentiment(), 7).unwrap();
        assert_eq!(export.instances.len(), 180);
        assert_eq!(export.n_original, 100);
        assert_eq!(export.n_cf, 80);
        assert_eq!(export.n_excluded, 0);
    }

    #[test]
    fn augment_same_seed_same_bytes() {
        let train = train_split(20);
        let cfs = ok_cfs(10);
        let task = Task::sentiment();
        let render = |seed| {
            let export = augment_export(&train, &cfs, &task, seed).unwrap();
            let split = DatasetSplit {
                name: SplitName::Train,
                instances: export.instances,
            };
            let mut buf = Vec::new();
            crate::corpus::write_dataset(&split, &mut buf).unwrap();
            buf
        };
        assert_eq!(render(42), render(42));
        assert_ne!(render(42), render(43));
    }

    #[test]
    fn augment_excludes_failed_records_and_counts_them() {
        let train = train_split(5);
        let mut cfs = ok_cfs(3);
        cfs[1].parse_status = ParseStatus::TemplateViolation;
        let export = augment_export(&train, &cfs, &Task::sentiment(), 0).unwrap();
        assert_eq!(export.n_cf, 2);
        assert_eq!(export.n_excluded, 1);
        assert_eq!(export.instances.len(), 7);
    }

    #[test]
    fn augment_restricted_to_original_ids_is_the_original_split() {
        let train = train_split(12);
        let cfs = ok_cfs(6);
        let export = augment_export(&train, &cfs, &Task::sentiment(), 99).unwrap();
        let mut restricted: Vec<FactualInstance> = export
            .instances
            .iter()
            .filter(|i| i.id.starts_with('t'))
            .cloned()
            .collect();
        restricted.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(restricted, train.instances);
    }

    #[test]
    fn augment_rejects_out_of_set_label() {
        let train = train_split(2);
        let mut cfs = ok_cfs(1);
        cfs[0].target_label = "sideways".into();
        assert!(matches!(
            augment_export(&train, &cfs, &Task::sentiment(), 0),
            Err(AnalysisError::LabelMismatch { .. })
        ));
    }

    fn report(generator: &str, ppl: f64, ts: f64, fr: f64) -> IntrinsicReport {
        IntrinsicReport {
            generator: generator.to_string(),
            dataset: "sa".to_string(),
            n_ok: 10,
            ppl: Some(ppl),
            ts: Some(ts),
            fr: Some(fr),
            excluded: ExclusionCounts::default(),
        }
    }

    #[test]
    fn accuracy_correlation_sign_convention() {
        // Lower TS coincides with higher accuracy, so Accuracy & -TS is
        // positive.
        let intrinsic = vec![
            report("a", 50.0, 0.1, 90.0),
            report("b", 50.0, 0.3, 80.0),
            report("c", 50.0, 0.5, 70.0),
        ];
        let rows_data = [
            AccuracyRow { generator: "a".into(), test_set: "orig".into(), accuracy: 95.0 },
            AccuracyRow { generator: "b".into(), test_set: "orig".into(), accuracy: 90.0 },
            AccuracyRow { generator: "c".into(), test_set: "orig".into(), accuracy: 85.0 },
        ];
        let refs: Vec<&AccuracyRow> = rows_data.iter().collect();
        let rows = correlate_accuracy(&intrinsic, &refs, None).unwrap();
        assert_eq!(rows[0].pairing, "Accuracy & -PPL");
        assert_eq!(rows[1].pairing, "Accuracy & -TS");
        assert_eq!(rows[1].rho, Some(1.0));
        // Constant PPL column: undefined, not zero.
        assert_eq!(rows[0].rho, None);
    }

    #[test]
    fn judge_correlation_row_labels() {
        let intrinsic = vec![
            report("a", 40.0, 0.1, 90.0),
            report("b", 50.0, 0.3, 80.0),
            report("c", 60.0, 0.5, 70.0),
        ];
        let judge = vec![
            JudgeAggregate { generator: "a".into(), fl: 3.9, ua: 3.5, rs: 2.2 },
            JudgeAggregate { generator: "b".into(), fl: 3.0, ua: 3.0, rs: 3.0 },
            JudgeAggregate { generator: "c".into(), fl: 2.0, ua: 2.5, rs: 3.8 },
        ];
        let rows = correlate_judge(&intrinsic, &judge, None).unwrap();
        let labels: Vec<&str> = rows.iter().map(|r| r.pairing.as_str()).collect();
        assert_eq!(labels, vec!["FL & FR", "UA & -TS", "RS & -PPL"]);
        assert_eq!(rows[0].rho, Some(1.0)); // FL tracks FR exactly here
        assert_eq!(rows[1].rho, Some(1.0)); // UA tracks -TS
        // RS rises while -PPL falls in this fixture, so the sign flips.
        assert_eq!(rows[2].rho, Some(-1.0));
    }

    #[test]
    fn insufficient_overlap_is_an_error() {
        let intrinsic = vec![report("a", 1.0, 1.0, 1.0)];
        let rows_data = [AccuracyRow {
            generator: "a".into(),
            test_set: "orig".into(),
            accuracy: 50.0,
        }];
        let refs: Vec<&AccuracyRow> = rows_data.iter().collect();
        assert!(matches!(
            correlate_accuracy(&intrinsic, &refs, None),
            Err(AnalysisError::InsufficientOverlap { shared: 1 })
        ));
    }

    #[test]
    fn accuracy_table_parsing_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acc.csv");
        std::fs::write(&path, "generator,test_set,accuracy\ngpt,orig,90.16\nhuman,orig,89.96\n")
            .unwrap();
        let table = AccuracyTable::from_csv_file(&path).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.test_sets(), vec!["orig"]);

        std::fs::write(&path, "generator,test_set,accuracy\ngpt,orig,101.0\n").unwrap();
        assert!(AccuracyTable::from_csv_file(&path).is_err());

        std::fs::write(&path, "generator,test_set,accuracy\ngpt,orig,90\ngpt,orig,91\n").unwrap();
        assert!(AccuracyTable::from_csv_file(&path).is_err());

        std::fs::write(&path, "wrong,header,here\n").unwrap();
        assert!(AccuracyTable::from_csv_file(&path).is_err());
    }

    // Counting-based rank oracle: rank = (#smaller) + (#equal + 1) / 2.
    fn oracle_ranks(values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .map(|&v| {
                let smaller = values.iter().filter(|&&w| w < v).count() as f64;
                let equal = values.iter().filter(|&&w| w == v).count() as f64;
                smaller + (equal + 1.0) / 2.0
            })
            .collect()
    }

    fn oracle_spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
        pearson(&oracle_ranks(xs), &oracle_ranks(ys))
    }

    proptest! {
        #[test]
        fn spearman_matches_counting_oracle_on_tied_vectors(
            xs in proptest::collection::vec(0i8..6, 2..40),
            ys_seed in proptest::collection::vec(0i8..6, 2..40),
        ) {
            let n = xs.len().min(ys_seed.len());
            let xs: Vec<f64> = xs[..n].iter().map(|&v| v as f64).collect();
            let ys: Vec<f64> = ys_seed[..n].iter().map(|&v| v as f64).collect();
            let ours = spearman(&xs, &ys).unwrap();
            let oracle = oracle_spearman(&xs, &ys);
            match (ours, oracle) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        // Rank-based: applying a strictly increasing transform to either
        // input leaves rho unchanged.
        #[test]
        fn spearman_invariant_under_monotone_transform(
            xs in proptest::collection::vec(-50.0f64..50.0, 3..30),
            ys_seed in proptest::collection::vec(-50.0f64..50.0, 3..30),
        ) {
            let n = xs.len().min(ys_seed.len());
            let xs = &xs[..n];
            let ys = &ys_seed[..n];
            let base = spearman(xs, ys).unwrap();
            let transformed: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
            let after = spearman(&transformed, ys).unwrap();
            match (base, after) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn spearman_self_and_negated_self(
            xs in proptest::collection::vec(-50.0f64..50.0, 2..30),
        ) {
            prop_assume!(xs.iter().any(|&v| v != xs[0]));
            let negated: Vec<f64> = xs.iter().map(|v| -v).collect();
            let self_rho = spearman(&xs, &xs).unwrap().unwrap();
            let neg_rho = spearman(&xs, &negated).unwrap().unwrap();
            prop_assert!((self_rho - 1.0).abs() < 1e-12);
            prop_assert!((neg_rho + 1.0).abs() < 1e-12);
        }
    }
}
