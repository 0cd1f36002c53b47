//! CSV reports and per-seed checkpoints for an experiment.
//!
//! Floats are written in shortest round-trip form, so parsing a report back
//! reproduces the exact values.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::experiment::ExperimentOutcome;

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Manifest(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn checkpoint_name(seed: u64) -> String {
    format!("model_seed{seed}.ckpt")
}

/// Writes `report.csv`, `summary.csv`, `roc_plot.csv` and one checkpoint per
/// seed into `dir`, returning the written paths.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let report = dir.join("report.csv");
    let rows: Vec<Vec<String>> = outcome
        .runs
        .iter()
        .map(|r| {
            vec![
                outcome.source.as_str().to_string(),
                outcome.granularity.clone(),
                r.seed.to_string(),
                r.test_auc.to_string(),
            ]
        })
        .collect();
    write_csv(&report, &["source", "granularity", "seed", "auc"], &rows)?;
    written.push(report);

    let summary = dir.join("summary.csv");
    let r = &outcome.report;
    write_csv(&summary, &["mean", "std"], &[vec![r.mean.to_string(), r.std.to_string()]])?;
    written.push(summary);

    let plot = dir.join("roc_plot.csv");
    write_roc_plot(r, &plot)?;
    written.push(plot);

    for run in &outcome.runs {
        let path = dir.join(checkpoint_name(run.seed));
        fs::write(&path, &run.checkpoint).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_roc_plot(report: &EvalReport, path: &Path) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .fpr_grid
        .iter()
        .zip(&report.mean_tpr)
        .zip(&report.std_tpr)
        .map(|((f, m), s)| vec![f.to_string(), m.to_string(), s.to_string()])
        .collect();
    write_csv(path, &["fpr", "mean_tpr", "std_tpr"], &rows)
}

/// One parsed `report.csv` row.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct ReportRow {
    pub source: String,
    pub granularity: String,
    pub seed: u64,
    pub auc: f64,
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

/// `(mean, std)` from `summary.csv`.
pub fn read_summary(path: &Path) -> Result<(f64, f64)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let row: (f64, f64) = r
        .deserialize()
        .next()
        .ok_or_else(|| Error::Manifest(format!("{}: no summary row", path.display())))?
        .map_err(|e| csv_err(path, e))?;
    Ok(row)
}
