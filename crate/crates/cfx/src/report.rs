//! Schema-tagged report tables rendered as CSV and Markdown.
//!
//! Column order is fixed per schema and numeric cells render with two
//! decimals. Undefined values render as an em dash, never as zero, so a
//! degenerate correlation cannot masquerade as "no correlation".

use crate::analysis::{AccuracyTable, CorrelationRow};
use crate::judge::ScoreDistribution;
use crate::metrics::IntrinsicReport;
use std::fmt::Write as _;
use std::path::Path;

pub const ABSENT: &str = "—";

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Int(u64),
    Absent,
}

impl Cell {
    pub fn num_opt(value: Option<f64>) -> Cell {
        match value {
            Some(v) => Cell::Num(v),
            None => Cell::Absent,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => format!("{v:.2}"),
            Cell::Int(v) => v.to_string(),
            Cell::Absent => ABSENT.to_string(),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Cell {
        Cell::Text(s.to_string())
    }
}

/// A rendered report: schema kind, fixed columns, rows, and header
/// metadata (seed, config digest) that rides along as comment lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub kind: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub meta: Vec<(String, String)>,
}

impl ReportTable {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        ReportTable {
            kind: kind.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_row(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row arity does not match schema {}",
            self.kind
        );
        self.rows.push(row);
    }

    fn csv_escape(field: &str) -> String {
        if field.contains(',') || field.contains('"') || field.contains('\n') {
            format!("\"{}\"", field.replace('"', "\"\""))
        } else {
            field.to_string()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.meta {
            let _ = writeln!(out, "# {key}={value}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|c| Self::csv_escape(&c.render())).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.meta {
            let _ = writeln!(out, "<!-- {key}={value} -->");
        }
        let _ = writeln!(out, "| {} |", self.columns.join(" | "));
        let _ = writeln!(
            out,
            "|{}|",
            self.columns.iter().map(|_| "---").collect::<Vec<_>>().join("|")
        );
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            let _ = writeln!(out, "| {} |", line.join(" | "));
        }
        out
    }

    /// Write `<base>.csv` and `<base>.md` next to each other.
    pub fn write_files(&self, base: &Path) -> std::io::Result<()> {
        std::fs::write(base.with_extension("csv"), self.to_csv())?;
        std::fs::write(base.with_extension("md"), self.to_markdown())?;
        Ok(())
    }
}

/// Intrinsic rows in the canonical column order: PPL, TS, FR, then the
/// exclusion counts.
pub fn intrinsic_table(reports: &[IntrinsicReport]) -> ReportTable {
    let mut table = ReportTable::new(
        "intrinsic",
        &[
            "generator",
            "dataset",
            "n_ok",
            "PPL",
            "TS",
            "FR",
            "n_violation",
            "n_refusal",
            "n_transport",
        ],
    );
    for report in reports {
        table.push_row(vec![
            Cell::Text(report.generator.clone()),
            Cell::Text(report.dataset.clone()),
            Cell::Int(report.n_ok as u64),
            Cell::num_opt(report.ppl),
            Cell::num_opt(report.ts),
            Cell::num_opt(report.fr),
            Cell::Int(report.excluded.template_violation as u64),
            Cell::Int(report.excluded.refusal as u64),
            Cell::Int(report.excluded.transport_failure as u64),
        ]);
    }
    table
}

/// Judge distribution rows: one per (set, aspect).
pub fn judge_table(rows: &[(String, String, ScoreDistribution, usize)]) -> ReportTable {
    let mut table = ReportTable::new(
        "judge",
        &[
            "set", "aspect", "1", "2", "3", "4", "1&2", "3&4", "Avg.", "n", "n_failed",
        ],
    );
    for (set, aspect, dist, n_failed) in rows {
        table.push_row(vec![
            Cell::Text(set.clone()),
            Cell::Text(aspect.clone()),
            Cell::Num(dist.pct_1),
            Cell::Num(dist.pct_2),
            Cell::Num(dist.pct_3),
            Cell::Num(dist.pct_4),
            Cell::Num(dist.pct_12),
            Cell::Num(dist.pct_34),
            Cell::Num(dist.avg),
            Cell::Int(dist.n as u64),
            Cell::Int(*n_failed as u64),
        ]);
    }
    table
}

pub fn correlation_table(rows: &[CorrelationRow]) -> ReportTable {
    let mut table = ReportTable::new("correlation", &["pairing", "rho", "n"]);
    for row in rows {
        table.push_row(vec![
            Cell::Text(row.pairing.clone()),
            Cell::num_opt(row.rho),
            Cell::Int(row.n as u64),
        ]);
    }
    table
}

pub fn augmentation_table(accuracies: &AccuracyTable) -> ReportTable {
    let mut table = ReportTable::new("augmentation", &["generator", "test_set", "accuracy"]);
    for row in &accuracies.rows {
        table.push_row(vec![
            Cell::Text(row.generator.clone()),
            Cell::Text(row.test_set.clone()),
            Cell::Num(row.accuracy),
        ]);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ExclusionCounts;

    #[test]
    fn empty_table_renders_header_only() {
        let table = ReportTable::new("correlation", &["pairing", "rho", "n"]);
        assert_eq!(table.to_csv(), "pairing,rho,n\n");
        let md = table.to_markdown();
        assert!(md.starts_with("| pairing | rho | n |"));
        assert_eq!(md.lines().count(), 2);
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut table = ReportTable::new("correlation", &["pairing", "rho", "n"]);
        table.push_row(vec!["UA & -TS".into(), Cell::Num(0.75), Cell::Int(6)]);
        assert_eq!(table.to_csv(), table.clone().to_csv());
        assert_eq!(table.to_csv(), "pairing,rho,n\nUA & -TS,0.75,6\n");
    }

    #[test]
    fn intrinsic_columns_in_ppl_ts_fr_order() {
        let report = IntrinsicReport {
            generator: "gen".into(),
            dataset: "sa".into(),
            n_ok: 7,
            ppl: Some(49.532),
            ts: Some(0.157),
            fr: Some(79.508),
            excluded: ExclusionCounts {
                template_violation: 2,
                refusal: 1,
                transport_failure: 0,
                zero_token_factual: 0,
            },
        };
        let csv = intrinsic_table(&[report]).to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "generator,dataset,n_ok,PPL,TS,FR,n_violation,n_refusal,n_transport"
        );
        assert_eq!(lines.next().unwrap(), "gen,sa,7,49.53,0.16,79.51,2,1,0");
    }

    #[test]
    fn absent_renders_as_dash_never_zero() {
        let rows = vec![CorrelationRow {
            pairing: "Accuracy & -PPL".to_string(),
            rho: None,
            n: 4,
        }];
        let csv = correlation_table(&rows).to_csv();
        assert!(csv.contains(&format!("Accuracy & -PPL,{ABSENT},4")));
    }

    #[test]
    fn meta_lines_carry_seed() {
        let table = ReportTable::new("intrinsic", &["a"]).with_meta("seed", "42");
        assert!(table.to_csv().starts_with("# seed=42\n"));
        assert!(table.to_markdown().starts_with("<!-- seed=42 -->"));
    }

    #[test]
    fn markdown_mirrors_csv_content() {
        let mut table = ReportTable::new("correlation", &["pairing", "rho", "n"]);
        table.push_row(vec!["FL & FR".into(), Cell::Num(0.83), Cell::Int(7)]);
        let md = table.to_markdown();
        assert!(md.contains("| FL & FR | 0.83 | 7 |"));
    }
}
