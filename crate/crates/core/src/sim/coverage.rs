//! Confidence-interval coverage experiments over a grid of sample sizes and
//! split counts.
//!
//! Each replication draws a fresh dataset and split assignment from
//! counter-derived seeds, runs the full split pipeline, and records whether
//! the Wald interval for the target coordinate covers the truth.
//! Replications that fail (non-convergence on every split, degenerate
//! splits, ...) are recorded with their error message, excluded from the
//! coverage denominator, and counted.

use rayon::prelude::*;
use serde::Serialize;

use super::child_seed;
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::solve::SolverConfig;
use crate::split::{fit_with_covariance, validity_minimums, wald_interval, SplitAssignment};

/// Settings of one coverage experiment.
#[derive(Clone, Debug)]
pub struct CoverageConfig {
    /// Model drawn from and fitted.
    pub model: ModelKind,
    /// Sample sizes of the grid.
    pub sample_sizes: Vec<usize>,
    /// Split counts of the grid.
    pub split_counts: Vec<usize>,
    /// Probability a row lands in the stage-1 half of each split.
    pub pi: f64,
    /// Replications per grid cell.
    pub replications: usize,
    /// Confidence level of the intervals.
    pub level: f64,
    /// Master seed; every replication's seeds derive from it.
    pub master_seed: u64,
    /// Value the intervals should cover; defaults to the model's true
    /// target under its default generating law.
    pub true_value: Option<f64>,
    /// Coordinate of the combined `(theta, beta)` vector the interval is
    /// built for; defaults to the first second-stage coordinate.
    pub target_coordinate: Option<usize>,
    /// Solver settings used for every fit.
    pub solver: SolverConfig<f64>,
}

impl CoverageConfig {
    /// Defaults: the usual grid of sample sizes, single-split and 25-split
    /// columns, balanced splits, 2000 replications, 95% intervals.
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            sample_sizes: vec![50, 100, 250, 500, 1000],
            split_counts: vec![1, 25],
            pi: 0.5,
            replications: 2000,
            level: 0.95,
            master_seed: 1,
            true_value: None,
            target_coordinate: None,
            solver: SolverConfig::default(),
        }
    }
}

/// Outcome of a single replication.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepRecord {
    /// Sample size of the cell.
    pub n: usize,
    /// Split count of the cell.
    pub b: usize,
    /// Replication index within the cell.
    pub rep: usize,
    /// Seed the dataset was drawn from.
    pub data_seed: u64,
    /// Seed the split assignment was drawn from.
    pub split_seed: u64,
    /// Point estimate of the target coordinate (NaN when failed).
    pub estimate: f64,
    /// Interval bounds (NaN when failed).
    pub lower: f64,
    /// Interval bounds (NaN when failed).
    pub upper: f64,
    /// Whether the interval covered the truth.
    pub hit: bool,
    /// Splits that produced a usable fit.
    pub b_used: usize,
    /// Whether the replication failed outright.
    pub failed: bool,
    /// Error message when failed, empty otherwise.
    pub message: String,
}

/// Aggregate of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    /// Sample size of the cell.
    pub n: usize,
    /// Split count of the cell.
    pub b: usize,
    /// Replications attempted.
    pub replications: usize,
    /// Replications that produced an interval.
    pub succeeded: usize,
    /// Replications that failed outright.
    pub failed: usize,
    /// Percent of successful replications whose interval covered the truth;
    /// absent when every replication failed.
    pub coverage_percent: Option<f64>,
    /// Monte Carlo standard error of the coverage percentage.
    pub mc_standard_error: Option<f64>,
    /// Mean interval width over successful replications.
    pub mean_interval_width: Option<f64>,
}

/// Full result of a coverage experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    /// Registry name of the model.
    pub model: String,
    /// Stage-1 inclusion probability used.
    pub pi: f64,
    /// Confidence level used.
    pub level: f64,
    /// Replications per cell.
    pub replications: usize,
    /// Master seed of the run.
    pub master_seed: u64,
    /// Truth the intervals were scored against.
    pub true_value: f64,
    /// One summary per grid cell, in grid order.
    pub cells: Vec<CellSummary>,
    /// Every replication, in grid-then-replication order.
    pub records: Vec<RepRecord>,
}

fn run_one(
    config: &CoverageConfig,
    truth: f64,
    cell: usize,
    n: usize,
    b: usize,
    rep: usize,
) -> RepRecord {
    let data_seed = child_seed(config.master_seed, cell as u64, (rep as u64) << 1);
    let split_seed = child_seed(config.master_seed, cell as u64, ((rep as u64) << 1) | 1);
    let attempt = || -> Result<(f64, f64, f64, usize)> {
        let data = config.model.simulate(n, data_seed)?;
        let system = config.model.system(&data)?;
        let (min_ones, min_zeros) = validity_minimums(n, system.dim_first(), system.dim_second());
        let splits =
            SplitAssignment::generate_valid(n, b, config.pi, split_seed, min_ones, min_zeros)?;
        let inference = fit_with_covariance(&system, &data, &splits, &config.solver)?;
        let target = config
            .target_coordinate
            .unwrap_or_else(|| system.dim_first());
        let estimate = inference.fit.combined()[target];
        let variance = inference.covariance.variance(target);
        let (lower, upper) = wald_interval(estimate, variance, config.level)?;
        Ok((estimate, lower, upper, inference.fit.b_used))
    };
    match attempt() {
        Ok((estimate, lower, upper, b_used)) => RepRecord {
            n,
            b,
            rep,
            data_seed,
            split_seed,
            estimate,
            lower,
            upper,
            hit: lower <= truth && truth <= upper,
            b_used,
            failed: false,
            message: String::new(),
        },
        Err(e) => RepRecord {
            n,
            b,
            rep,
            data_seed,
            split_seed,
            estimate: f64::NAN,
            lower: f64::NAN,
            upper: f64::NAN,
            hit: false,
            b_used: 0,
            failed: true,
            message: e.to_string(),
        },
    }
}

fn summarize(n: usize, b: usize, records: &[RepRecord]) -> CellSummary {
    let replications = records.len();
    let failed = records.iter().filter(|r| r.failed).count();
    let succeeded = replications - failed;
    let (coverage_percent, mc_standard_error, mean_interval_width) = if succeeded > 0 {
        let hits = records.iter().filter(|r| !r.failed && r.hit).count();
        let p = hits as f64 / succeeded as f64;
        let width_sum: f64 = records
            .iter()
            .filter(|r| !r.failed)
            .map(|r| r.upper - r.lower)
            .sum();
        (
            Some(100.0 * p),
            Some(100.0 * (p * (1.0 - p) / succeeded as f64).sqrt()),
            Some(width_sum / succeeded as f64),
        )
    } else {
        (None, None, None)
    };
    CellSummary {
        n,
        b,
        replications,
        succeeded,
        failed,
        coverage_percent,
        mc_standard_error,
        mean_interval_width,
    }
}

/// Runs the full coverage grid.
///
/// Replications are independent and parallelized; results are merged in
/// replication order, so the report is identical at any thread count.
pub fn run_coverage(config: &CoverageConfig) -> Result<CoverageReport> {
    if config.replications == 0 {
        return Err(Error::InvalidArgument(
            "coverage needs at least one replication".into(),
        ));
    }
    if config.sample_sizes.is_empty() || config.split_counts.is_empty() {
        return Err(Error::InvalidArgument(
            "coverage needs at least one sample size and one split count".into(),
        ));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::InvalidLevel {
            level: config.level,
        });
    }
    if !(config.pi > 0.0 && config.pi < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "stage-1 inclusion probability must lie strictly inside (0, 1), got {}",
            config.pi
        )));
    }
    let truth = config
        .true_value
        .unwrap_or_else(|| config.model.true_target());

    let mut cells = Vec::new();
    let mut records = Vec::new();
    let mut cell_index = 0usize;
    for &n in &config.sample_sizes {
        for &b in &config.split_counts {
            let cell_records: Vec<RepRecord> = (0..config.replications)
                .into_par_iter()
                .map(|rep| run_one(config, truth, cell_index, n, b, rep))
                .collect();
            cells.push(summarize(n, b, &cell_records));
            records.extend(cell_records);
            cell_index += 1;
        }
    }
    Ok(CoverageReport {
        model: config.model.name().to_string(),
        pi: config.pi,
        level: config.level,
        replications: config.replications,
        master_seed: config.master_seed,
        true_value: truth,
        cells,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> CoverageConfig {
        let mut config = CoverageConfig::new(ModelKind::Mean);
        config.sample_sizes = vec![60];
        config.split_counts = vec![1, 5];
        config.replications = 40;
        config.master_seed = 9;
        config
    }

    #[test]
    fn mean_model_coverage_is_near_nominal() {
        let mut config = tiny_config();
        config.sample_sizes = vec![120];
        config.split_counts = vec![5];
        config.replications = 300;
        let report = run_coverage(&config).unwrap();
        let cell = &report.cells[0];
        assert_eq!(cell.failed, 0);
        let coverage = cell.coverage_percent.unwrap();
        // 95% nominal; Monte Carlo standard error here is about 1.3 points.
        assert!(
            (88.0..=99.5).contains(&coverage),
            "coverage = {coverage} ± {:?}",
            cell.mc_standard_error
        );
    }

    #[test]
    fn reports_are_reproducible() {
        let config = tiny_config();
        let a = run_coverage(&config).unwrap();
        let b = run_coverage(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_replication_coverage_is_zero_or_one_hundred() {
        let mut config = tiny_config();
        config.replications = 1;
        let report = run_coverage(&config).unwrap();
        for cell in &report.cells {
            if cell.succeeded == 1 {
                let c = cell.coverage_percent.unwrap();
                assert!(c == 0.0 || c == 100.0, "got {c}");
            }
        }
    }

    #[test]
    fn record_bookkeeping_matches_summaries() {
        let config = tiny_config();
        let report = run_coverage(&config).unwrap();
        assert_eq!(report.records.len(), 2 * config.replications);
        for cell in &report.cells {
            let cell_records: Vec<_> = report
                .records
                .iter()
                .filter(|r| r.n == cell.n && r.b == cell.b)
                .collect();
            assert_eq!(cell_records.len(), cell.replications);
            let hits = cell_records.iter().filter(|r| !r.failed && r.hit).count();
            let succeeded = cell_records.iter().filter(|r| !r.failed).count();
            assert_eq!(succeeded, cell.succeeded);
            if let Some(c) = cell.coverage_percent {
                assert_eq!(c, 100.0 * hits as f64 / succeeded as f64);
            }
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut config = tiny_config();
        config.replications = 0;
        assert!(run_coverage(&config).is_err());
        let mut config = tiny_config();
        config.pi = 1.0;
        assert!(run_coverage(&config).is_err());
        let mut config = tiny_config();
        config.level = 1.0;
        assert!(run_coverage(&config).is_err());
        let mut config = tiny_config();
        config.sample_sizes.clear();
        assert!(run_coverage(&config).is_err());
    }
}
