//! CSV and JSON coverage reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::experiment::CoverageReport;
use crate::error::{BootError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub method: String,
    pub model: String,
    pub statistic: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub replications: usize,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub alpha: f64,
    pub cvr: f64,
    pub mean_width: f64,
    pub failures: usize,
}

pub const CSV_HEADER: &str = "method,model,statistic,n,N,B,alpha,cvr,mean_width,failures";

impl CoverageReport {
    /// One row per cell, ordered by method, statistic and then `n`.
    pub fn rows(&self) -> Vec<CoverageRow> {
        let mut rows: Vec<CoverageRow> = self
            .cells
            .iter()
            .map(|c| CoverageRow {
                method: c.method.to_string(),
                model: self.model.clone(),
                statistic: c.target.to_string(),
                n: c.n,
                replications: self.replications,
                replicates: self.replicates,
                alpha: self.alpha,
                cvr: c.cvr(),
                mean_width: c.mean_width(),
                failures: c.failures(),
            })
            .collect();
        rows.sort_by(|a, b| {
            (a.method.as_str(), a.statistic.as_str(), a.n).cmp(&(
                b.method.as_str(),
                b.statistic.as_str(),
                b.n,
            ))
        });
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = BootError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(BootError::invalid(format!("unknown report format '{s}'"))),
        }
    }
}

// Statistic labels never contain commas or quotes, so no CSV escaping is needed.
pub fn rows_to_csv(rows: &[CoverageRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.model,
            r.statistic,
            r.n,
            r.replications,
            r.replicates,
            r.alpha,
            r.cvr,
            r.mean_width,
            r.failures
        );
    }
    out
}

pub fn rows_to_json(rows: &[CoverageRow]) -> Result<String> {
    serde_json::to_string_pretty(rows)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| BootError::invalid(format!("cannot serialise report: {e}")))
}

pub fn render_report(report: &CoverageReport, format: ReportFormat) -> Result<String> {
    let rows = report.rows();
    match format {
        ReportFormat::Csv => Ok(rows_to_csv(&rows)),
        ReportFormat::Json => rows_to_json(&rows),
    }
}

pub fn emit_report(report: &CoverageReport, format: ReportFormat, path: &Path) -> Result<()> {
    fs::write(path, render_report(report, format)?)?;
    Ok(())
}
