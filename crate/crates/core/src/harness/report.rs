//! Experiment reports: per-image rows, aggregates derived from them, and
//! their JSON and CSV renderings.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EpochMetrics;

pub const SCHEMA_VERSION: u32 = 1;

/// One evaluated image under one attack, defense or preset.
///
/// `success` means the final prediction differs from the label: an attack
/// that worked, an adversarial image that survived a defense, or a clean or
/// filtered image the model gets wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub group: String,
    /// Position of the image in the evaluated split.
    pub index: usize,
    pub label: usize,
    pub clean_prediction: usize,
    pub prediction: usize,
    pub success: bool,
    pub iterations: usize,
    pub first_success: Option<usize>,
    pub l2_to_target: Option<f64>,
    pub wall_secs: f64,
}

impl Row {
    pub fn clean_correct(&self) -> bool {
        self.clean_prediction == self.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub group: String,
    pub attempts: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Rows whose clean image was classified correctly.
    pub clean_correct: usize,
    pub successes_on_correct: usize,
    pub success_rate_on_correct: f64,
    /// Rows that were clean-correct and stayed correct, over all attempts.
    pub robust_accuracy: f64,
    pub mean_iterations: f64,
    pub mean_wall_secs: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Aggregate {
    pub fn from_rows(group: &str, rows: &[&Row]) -> Aggregate {
        let attempts = rows.len();
        let successes = rows.iter().filter(|r| r.success).count();
        let clean_correct = rows.iter().filter(|r| r.clean_correct()).count();
        let successes_on_correct = rows.iter().filter(|r| r.clean_correct() && r.success).count();
        let iterations: usize = rows.iter().map(|r| r.iterations).sum();
        let wall: f64 = rows.iter().map(|r| r.wall_secs).sum();
        Aggregate {
            group: group.to_string(),
            attempts,
            successes,
            success_rate: ratio(successes, attempts),
            clean_correct,
            successes_on_correct,
            success_rate_on_correct: ratio(successes_on_correct, clean_correct),
            robust_accuracy: ratio(clean_correct - successes_on_correct, attempts),
            mean_iterations: ratio(iterations, attempts),
            mean_wall_secs: if attempts == 0 { 0.0 } else { wall / attempts as f64 },
        }
    }
}

/// Aggregates per group, groups in order of first appearance.
pub fn recompute_aggregates(rows: &[Row]) -> Vec<Aggregate> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&Row>> = BTreeMap::new();
    for row in rows {
        let entry = groups.entry(&row.group).or_default();
        if entry.is_empty() {
            order.push(&row.group);
        }
        entry.push(row);
    }
    order
        .into_iter()
        .map(|g| Aggregate::from_rows(g, &groups[g]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub tool_version: String,
    /// `attack`, `defense`, `style`, `sweep`, `train` or `advtrain`.
    pub kind: String,
    pub seed: u64,
    pub model_id: String,
    /// The configuration the run used, as flat key/value pairs.
    pub config: BTreeMap<String, String>,
    /// Interpretation choices that affect the numbers.
    pub notes: Vec<String>,
    pub aggregates: Vec<Aggregate>,
    pub rows: Vec<Row>,
    pub epochs: Vec<EpochMetrics>,
}

impl ExperimentReport {
    pub fn new(kind: &str, seed: u64, model_id: &str, config: BTreeMap<String, String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: kind.to_string(),
            seed,
            model_id: model_id.to_string(),
            config,
            notes: Vec::new(),
            aggregates: Vec::new(),
            rows: Vec::new(),
            epochs: Vec::new(),
        }
    }

    /// Replaces the rows and derives the aggregates from them.
    pub fn set_rows(&mut self, rows: Vec<Row>) {
        self.aggregates = recompute_aggregates(&rows);
        self.rows = rows;
    }

    pub fn aggregate(&self, group: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.group == group)
    }

    pub fn aggregates_are_consistent(&self) -> bool {
        self.aggregates == recompute_aggregates(&self.rows)
    }

    /// A copy with every wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> ExperimentReport {
        let mut out = self.clone();
        for r in &mut out.rows {
            r.wall_secs = 0.0;
        }
        for a in &mut out.aggregates {
            a.mean_wall_secs = 0.0;
        }
        for e in &mut out.epochs {
            e.elapsed_secs = 0.0;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: ExperimentReport = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::format(
                "report",
                format!("schema version {} (expected {SCHEMA_VERSION})", report.schema_version),
            ));
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

const AGGREGATE_HEADER: [&str; 10] = [
    "group",
    "attempts",
    "successes",
    "success_rate",
    "clean_correct",
    "successes_on_correct",
    "success_rate_on_correct",
    "robust_accuracy",
    "mean_iterations",
    "mean_wall_secs",
];

const ROW_HEADER: [&str; 10] = [
    "group",
    "index",
    "label",
    "clean_prediction",
    "prediction",
    "success",
    "iterations",
    "first_success",
    "l2_to_target",
    "wall_secs",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format("csv", format!("{}: {e}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], records: &[T]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# schema_version={SCHEMA_VERSION}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body = text
        .strip_prefix(&format!("# schema_version={SCHEMA_VERSION}\n"))
        .ok_or_else(|| Error::format("csv", format!("{}: missing schema header", path.display())))?;
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_err(path, e))
}

/// Sibling file holding the per-image rows of a CSV report.
pub fn rows_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}_rows.csv"))
}

/// Writes `report`. CSV output is the aggregate table at `path` plus the
/// per-image rows next to it (see [`rows_path`]); both start with a schema
/// comment line.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Json => fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e)),
        ReportFormat::Csv => {
            write_csv(path, &AGGREGATE_HEADER, &report.aggregates)?;
            write_csv(&rows_path(path), &ROW_HEADER, &report.rows)
        }
    }
}

pub fn read_json_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    ExperimentReport::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Reads back the two tables of a CSV report.
pub fn read_csv_report(path: impl AsRef<Path>) -> Result<(Vec<Aggregate>, Vec<Row>)> {
    let path = path.as_ref();
    Ok((read_csv(path)?, read_csv(&rows_path(path))?))
}
