//! CSV persistence for evaluation reports and per-sample detector scores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MeadError, Result};
use crate::eval::GroupReport;

pub const REPORT_HEADER: [&str; 8] =
    ["norm", "epsilon", "setting", "detector", "auroc", "fpr_at_95_tpr", "n_naturals", "n_adversarials"];

fn csv_err(path: &Path, e: csv::Error) -> MeadError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MeadError::io(path, io),
        other => MeadError::Serialization(format!("{}: {other:?}", path.display())),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| csv_err(path, e))
}

/// Report rows as strings, in output order.
pub fn report_records(reports: &[GroupReport]) -> Vec<[String; 8]> {
    reports
        .iter()
        .flat_map(|g| {
            g.rows.iter().map(move |r| {
                [
                    g.norm.to_string(),
                    g.epsilon.map_or_else(String::new, |e| e.to_string()),
                    r.setting.to_string(),
                    g.detector.clone(),
                    r.auroc.to_string(),
                    r.fpr_at_95_tpr.to_string(),
                    r.n_naturals.to_string(),
                    r.n_adversarials.to_string(),
                ]
            })
        })
        .collect()
}

/// Writes one row per (group, setting); UTF-8 with LF line endings.
pub fn write_report_csv(reports: &[GroupReport], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(REPORT_HEADER).map_err(|e| csv_err(path, e))?;
    for rec in report_records(reports) {
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| MeadError::io(path, e))
}

/// Reads a report written by [`write_report_csv`], checking the header.
pub fn read_report_csv(path: &Path) -> Result<Vec<[String; 8]>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(MeadError::Parse(format!("{}: unexpected report header", path.display())));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let fields: Vec<String> = rec.iter().map(str::to_string).collect();
            fields
                .try_into()
                .map_err(|_| MeadError::Parse(format!("{}: report row with wrong field count", path.display())))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: String,
    pub detector: String,
    pub score: f64,
}

pub fn write_scores_csv(rows: &[ScoreRow], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| MeadError::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
