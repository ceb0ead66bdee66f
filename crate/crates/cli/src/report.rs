//! Human-readable rendering of a run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use riccilab::bounds::BoundReport;
use riccilab::io::{self, CsvTable};

use crate::run::{JobStatus, Manifest, MANIFEST};

#[derive(Debug)]
pub enum ReportError {
    MissingManifest(std::path::PathBuf),
    Core(riccilab::Error),
}

impl std::fmt::Display for ReportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReportError::MissingManifest(p) => {
                write!(f, "missing manifest: {} does not exist", p.display())
            }
            ReportError::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for ReportError {}

impl From<riccilab::Error> for ReportError {
    fn from(e: riccilab::Error) -> Self {
        ReportError::Core(e)
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4e}")
    } else {
        format!("{v}")
    }
}

/// Renders a CSV file as an aligned table, keeping at most `limit` columns.
fn csv_as_table(path: &Path, limit: usize) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next()?.split(',').take(limit).collect();
    let rows: Vec<Vec<String>> = lines
        .map(|l| {
            l.split(',')
                .take(limit)
                .map(|c| match c.parse::<f64>() {
                    Ok(v) if c.contains(['.', 'e', 'n']) => num(v),
                    _ => c.to_string(),
                })
                .collect()
        })
        .collect();
    Some(io::aligned(&header, &rows))
}

/// Reads `dir`, writes `report.txt` and `matrix.csv` into it and returns the
/// text.
pub fn emit_report(dir: &Path) -> Result<String, ReportError> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(ReportError::MissingManifest(path));
    }
    let manifest: Manifest = io::read_json(&path)?;
    let mut out = String::new();
    let state = if manifest.complete {
        "complete"
    } else {
        "incomplete"
    };
    let _ = writeln!(
        out,
        "scenario {} (seed {}): {state}\n",
        manifest.scenario, manifest.seed
    );

    let mut reports: Vec<(String, BoundReport)> = Vec::new();
    for p in io::list_files(&dir.join("reports"), "json").unwrap_or_default() {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        reports.push((name, io::read_json(&p)?));
    }

    let mut matrix = CsvTable::new(&[
        "report",
        "verdict",
        "pass",
        "in_hypothesis",
        "worst_margin",
        "slack",
        "target",
    ]);
    let mut rows = Vec::new();
    for (name, r) in &reports {
        rows.push(vec![
            name.clone(),
            r.verdict().to_string(),
            num(r.worst_margin),
            num(r.slack),
            r.target.clone(),
        ]);
        matrix.push_cells(vec![
            name.clone(),
            r.verdict().to_string(),
            r.pass.to_string(),
            r.in_hypothesis.to_string(),
            io::fmt_num(r.worst_margin),
            io::fmt_num(r.slack),
            format!("\"{}\"", r.target.replace('"', "'")),
        ]);
    }
    out.push_str(&io::aligned(
        &["report", "verdict", "worst margin", "slack", "target"],
        &rows,
    ));

    let mut constants = Vec::new();
    for (name, r) in &reports {
        for (k, v) in &r.fitted_constants {
            constants.push(vec![name.clone(), k.clone(), num(*v)]);
        }
    }
    if !constants.is_empty() {
        out.push_str("\nfitted constants\n");
        out.push_str(&io::aligned(&["report", "constant", "value"], &constants));
    }

    let flags: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|(name, r)| {
            r.hypothesis_flags
                .iter()
                .map(move |f| vec![name.clone(), f.clone()])
        })
        .collect();
    if !flags.is_empty() {
        out.push_str("\nhypothesis flags\n");
        out.push_str(&io::aligned(&["report", "flag"], &flags));
    }

    let unfinished: Vec<Vec<String>> = manifest
        .jobs
        .iter()
        .filter(|(_, j)| j.status != JobStatus::Ok)
        .map(|(k, j)| {
            let status = serde_json::to_value(j.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            vec![k.clone(), status, j.error.clone().unwrap_or_default()]
        })
        .collect();
    if !unfinished.is_empty() {
        out.push_str("\nincomplete jobs\n");
        out.push_str(&io::aligned(&["job", "status", "error"], &unfinished));
    }

    let series = dir.join("series");
    for p in io::list_files(&series, "csv").unwrap_or_default() {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if stem.starts_with("entropy_") || stem == "blowdown" {
            if let Some(table) = csv_as_table(&p, 6) {
                let _ = write!(out, "\n{stem}\n{table}");
            }
        }
    }

    fs::write(dir.join("report.txt"), &out).map_err(|e| riccilab::Error::Io {
        path: dir.join("report.txt"),
        source: e,
    })?;
    matrix.write(&dir.join("matrix.csv"))?;
    Ok(out)
}
