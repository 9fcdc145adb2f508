//! JSON and CSV output for experiment reports.

use std::fs;
use std::path::{Path, PathBuf};

use super::run::CrrReport;
use crate::error::{Error, Result};

pub const REPORT_JSON: &str = "report.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const LOSS_CURVES_CSV: &str = "loss_curves.csv";

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Argument(format!("csv: {e}"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per report: mean +/- SE next to the published value if any.
pub fn summary_csv(reports: &[CrrReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "label",
        "experiment",
        "state",
        "band",
        "electrodes",
        "model",
        "n_subjects",
        "mean_crr",
        "standard_error",
        "published_mean",
        "published_se",
        "param_count",
        "config_hash",
    ])
    .map_err(csv_error)?;
    for r in reports {
        let c = &r.config;
        w.write_record([
            r.label.clone(),
            c.experiment.to_string(),
            c.state.to_string(),
            c.band.to_string(),
            c.electrodes.to_string(),
            c.model.label(),
            r.subjects.len().to_string(),
            r.mean_crr.to_string(),
            r.standard_error.to_string(),
            fmt_opt(r.published.as_ref().map(|p| p.mean)),
            fmt_opt(r.published.as_ref().and_then(|p| p.se)),
            r.param_count.map(|n| n.to_string()).unwrap_or_default(),
            r.config_hash.clone(),
        ])
        .map_err(csv_error)?;
    }
    String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)
}

/// Per-epoch losses, one series per report label.
pub fn loss_curves_csv(reports: &[CrrReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "fold", "epoch", "train_loss", "val_loss", "epoch_seconds"])
        .map_err(csv_error)?;
    for r in reports {
        for f in &r.folds {
            for (e, loss) in f.train_loss.iter().enumerate() {
                w.write_record([
                    r.label.clone(),
                    f.fold.to_string(),
                    (e + 1).to_string(),
                    loss.to_string(),
                    fmt_opt(f.val_loss.get(e).copied()),
                    fmt_opt(f.epoch_seconds.get(e).copied()),
                ])
                .map_err(csv_error)?;
            }
        }
    }
    String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)
}

pub fn reports_json(reports: &[CrrReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub summary: PathBuf,
    pub loss_curves: PathBuf,
}

/// Writes the full JSON, the summary CSV and the loss-curve CSV into `dir`.
pub fn write_report_files(dir: &Path, reports: &[CrrReport]) -> Result<ReportFiles> {
    if reports.is_empty() {
        return Err(Error::Argument("no reports to write".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        json: dir.join(REPORT_JSON),
        summary: dir.join(SUMMARY_CSV),
        loss_curves: dir.join(LOSS_CURVES_CSV),
    };
    let write = |p: &Path, text: String| fs::write(p, text).map_err(|e| Error::io(p, e));
    write(&files.json, reports_json(reports)?)?;
    write(&files.summary, summary_csv(reports)?)?;
    write(&files.loss_curves, loss_curves_csv(reports)?)?;
    Ok(files)
}

/// Parses one report or an array of reports.
pub fn parse_reports(text: &str) -> Result<Vec<CrrReport>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.is_array() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(vec![serde_json::from_value(value)?])
    }
}

/// Reads reports from a JSON file, or from every `*.json` file in a
/// directory (sorted by name).
pub fn read_reports(path: &Path) -> Result<Vec<CrrReport>> {
    let read = |p: &Path| -> Result<Vec<CrrReport>> {
        parse_reports(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)
    };
    if path.is_file() {
        return read(path);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read(&f)?);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!("no reports found in {}", path.display())));
    }
    Ok(out)
}
