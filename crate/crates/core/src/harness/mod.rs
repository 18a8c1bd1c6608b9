//! Simulation harness: data-generating models, coverage experiments and
//! their reports.

mod experiment;
mod model;
mod report;

use std::fs;
use std::path::Path;

pub use experiment::{
    experiment_interval, experiment_seed, run_coverage, run_coverage_with, CoverageCell,
    CoverageReport, Experiment, ExperimentConfig, ExperimentOutcome, Method, Target,
    MIN_REPLICATIONS,
};
pub use model::{
    generate_series, paper_f, true_parameter, ModelSpec, Transfer, AR_BURN_IN, CACHE_DIR_ENV,
    ORACLE_LEN, ORACLE_SEED,
};
pub use report::{
    emit_report, render_report, rows_to_csv, rows_to_json, CoverageRow, ReportFormat, CSV_HEADER,
};

use crate::error::{BootError, Result};
use crate::transform::SeriesSample;

/// `key = value` pairs of a plain-text config; `#` starts a comment.
pub(crate) fn key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            BootError::invalid(format!(
                "line {}: expected 'key = value', got '{line}'",
                i + 1
            ))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Reads a single-column series, one value per line; a non-numeric first
/// line is taken as a header.
pub fn read_series(path: &Path) -> Result<SeriesSample> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or_default().trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(BootError::invalid(format!(
                    "{}: line {} is not a number: '{field}'",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    SeriesSample::new(values)
}

/// CSV of a simulated path with columns `t, W, Y` (`t` from 1).
pub fn simulation_csv(model: &ModelSpec, n: usize, seed: u64) -> Result<String> {
    if n < 2 {
        return Err(BootError::invalid(format!(
            "series length must be at least 2, got {n}"
        )));
    }
    let (w, y) = model.generate_paths(n, seed);
    let mut out = String::from("t,W,Y\n");
    for (t, (a, b)) in w.iter().zip(&y).enumerate() {
        out.push_str(&format!("{},{a},{b}\n", t + 1));
    }
    Ok(out)
}
