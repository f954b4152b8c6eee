//! Writers turning fits and simulation reports into CSV and plain text.
//!
//! Floats are written with Rust's shortest-roundtrip formatting, so outputs
//! are byte-identical across runs and thread counts whenever the underlying
//! numbers are.

use std::io;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sim::{BSweepReport, CoverageReport};
use crate::split::{wald_interval, SandwichCovariance};

/// Row labels for a combined `(theta, beta)` vector: `theta_1..theta_p`,
/// then `beta_1..beta_q`.
pub fn coordinate_names(dim_first: usize, dim_second: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(dim_first + dim_second);
    for j in 0..dim_first {
        names.push(format!("theta_{}", j + 1));
    }
    for j in 0..dim_second {
        names.push(format!("beta_{}", j + 1));
    }
    names
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one row per coordinate: estimate, standard error, and Wald
/// interval at the given level.
pub fn write_estimates_csv(
    names: &[String],
    estimate: &DVector<f64>,
    covariance: &SandwichCovariance<f64>,
    level: f64,
    writer: impl io::Write,
) -> Result<()> {
    if names.len() != estimate.len() {
        return Err(Error::InvalidArgument(format!(
            "{} coordinate names for {} estimates",
            names.len(),
            estimate.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["coordinate", "estimate", "std_error", "lower", "upper"])?;
    for (i, name) in names.iter().enumerate() {
        let variance = covariance.variance(i);
        let (lower, upper) = wald_interval(estimate[i], variance, level)?;
        w.write_record([
            name.clone(),
            estimate[i].to_string(),
            variance.sqrt().to_string(),
            lower.to_string(),
            upper.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a labeled covariance matrix: header row of names, then one named
/// row per coordinate.
pub fn write_covariance_csv(
    names: &[String],
    covariance: &DMatrix<f64>,
    writer: impl io::Write,
) -> Result<()> {
    if names.len() != covariance.nrows() || !covariance.is_square() {
        return Err(Error::InvalidArgument(format!(
            "{} coordinate names for a {}x{} covariance",
            names.len(),
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["coordinate".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut record = vec![name.clone()];
        for j in 0..names.len() {
            record.push(covariance[(i, j)].to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one row per grid cell of a coverage report.
pub fn write_coverage_summary_csv(report: &CoverageReport, writer: impl io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "model",
        "n",
        "b",
        "replications",
        "succeeded",
        "failed",
        "coverage_percent",
        "mc_standard_error",
        "mean_interval_width",
    ])?;
    for cell in &report.cells {
        w.write_record([
            report.model.clone(),
            cell.n.to_string(),
            cell.b.to_string(),
            cell.replications.to_string(),
            cell.succeeded.to_string(),
            cell.failed.to_string(),
            fmt_opt(cell.coverage_percent),
            fmt_opt(cell.mc_standard_error),
            fmt_opt(cell.mean_interval_width),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one row per replication of a coverage report.
pub fn write_coverage_records_csv(report: &CoverageReport, writer: impl io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "n",
        "b",
        "rep",
        "data_seed",
        "split_seed",
        "estimate",
        "lower",
        "upper",
        "hit",
        "b_used",
        "failed",
        "message",
    ])?;
    for r in &report.records {
        w.write_record([
            r.n.to_string(),
            r.b.to_string(),
            r.rep.to_string(),
            r.data_seed.to_string(),
            r.split_seed.to_string(),
            r.estimate.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            r.hit.to_string(),
            r.b_used.to_string(),
            r.failed.to_string(),
            r.message.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a human-readable summary of a coverage report.
pub fn write_coverage_text(report: &CoverageReport, mut writer: impl io::Write) -> Result<()> {
    writeln!(
        writer,
        "coverage of {}% intervals, model {}, pi {}, {} replications per cell, \
         master seed {}, true value {}",
        report.level * 100.0,
        report.model,
        report.pi,
        report.replications,
        report.master_seed,
        report.true_value
    )?;
    writeln!(writer)?;
    writeln!(
        writer,
        "{:>6} {:>5} {:>10} {:>8} {:>10} {:>8} {:>12}",
        "n", "B", "coverage%", "mc se", "mean width", "failed", "succeeded"
    )?;
    for cell in &report.cells {
        writeln!(
            writer,
            "{:>6} {:>5} {:>10} {:>8} {:>10} {:>8} {:>12}",
            cell.n,
            cell.b,
            cell.coverage_percent
                .map(|c| format!("{c:.2}"))
                .unwrap_or_else(|| "-".into()),
            cell.mc_standard_error
                .map(|c| format!("{c:.2}"))
                .unwrap_or_else(|| "-".into()),
            cell.mean_interval_width
                .map(|c| format!("{c:.4}"))
                .unwrap_or_else(|| "-".into()),
            cell.failed,
            cell.succeeded
        )?;
    }
    Ok(())
}

/// Writes one row per prefix length of a split-count sweep.
pub fn write_bsweep_csv(report: &BSweepReport, writer: impl io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["b", "b_used", "estimate", "lower", "upper"])?;
    for p in &report.points {
        w.write_record([
            p.b.to_string(),
            p.b_used.to_string(),
            p.estimate.to_string(),
            p.lower.to_string(),
            p.upper.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one row per split of a split-count sweep.
pub fn write_bsweep_per_split_csv(report: &BSweepReport, writer: impl io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["split", "converged", "estimate", "message"])?;
    for r in &report.per_split {
        w.write_record([
            r.split.to_string(),
            r.converged.to_string(),
            r.estimate.to_string(),
            r.message.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
