//! Sweep over the number of splits for a single dataset: how the aggregated
//! estimate and its confidence interval evolve as splits accumulate.
//!
//! All `b_max` splits are fitted once; the point for each prefix length `b`
//! is the running mean of the first `b` per-split estimates and influence
//! rows, so the whole sweep costs one pass of fits.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::solve::SolverConfig;
use crate::split::{
    fit_single_split, influence_rows_single, sandwich_covariance, validity_minimums,
    wald_interval, SplitAssignment,
};
use crate::system::TwoStageSystem;

/// Settings of a split-count sweep.
#[derive(Clone, Debug)]
pub struct BSweepConfig {
    /// Largest split count; the sweep reports every prefix 1..=b_max.
    pub b_max: usize,
    /// Probability a row lands in the stage-1 half of each split.
    pub pi: f64,
    /// Confidence level of the intervals.
    pub level: f64,
    /// Seed of the split assignment.
    pub seed: u64,
    /// Coordinate of the combined `(theta, beta)` vector tracked; defaults
    /// to the first second-stage coordinate.
    pub target_coordinate: Option<usize>,
    /// Solver settings used for every fit.
    pub solver: SolverConfig<f64>,
}

impl Default for BSweepConfig {
    fn default() -> Self {
        Self {
            b_max: 50,
            pi: 0.5,
            level: 0.95,
            seed: 1,
            target_coordinate: None,
            solver: SolverConfig::default(),
        }
    }
}

/// Aggregated estimate and interval after the first `b` splits.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BSweepPoint {
    /// Prefix length.
    pub b: usize,
    /// Usable splits among the first `b`.
    pub b_used: usize,
    /// Running-mean estimate of the target coordinate (NaN when no split
    /// in the prefix succeeded).
    pub estimate: f64,
    /// Interval bounds (NaN when no split in the prefix succeeded).
    pub lower: f64,
    /// Interval bounds (NaN when no split in the prefix succeeded).
    pub upper: f64,
}

/// Outcome of one split within the sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerSplitRecord {
    /// Split index.
    pub split: usize,
    /// Whether the split produced a usable fit.
    pub converged: bool,
    /// The split's own estimate of the target coordinate (NaN when failed).
    pub estimate: f64,
    /// Error message when failed, empty otherwise.
    pub message: String,
}

/// Full result of a split-count sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BSweepReport {
    /// Largest split count of the sweep.
    pub b_max: usize,
    /// Stage-1 inclusion probability used.
    pub pi: f64,
    /// Confidence level used.
    pub level: f64,
    /// Seed of the split assignment.
    pub seed: u64,
    /// Tracked coordinate of the combined parameter vector.
    pub target_coordinate: usize,
    /// One point per prefix length, in order.
    pub points: Vec<BSweepPoint>,
    /// One record per split, in order.
    pub per_split: Vec<PerSplitRecord>,
}

/// Runs the sweep on one dataset.
pub fn run_b_sweep(
    system: &TwoStageSystem<f64>,
    data: &Dataset<f64>,
    config: &BSweepConfig,
) -> Result<BSweepReport> {
    if config.b_max == 0 {
        return Err(Error::InvalidArgument(
            "split-count sweep needs at least one split".into(),
        ));
    }
    let n = data.n_rows();
    let (min_ones, min_zeros) = validity_minimums(n, system.dim_first(), system.dim_second());
    let splits = SplitAssignment::generate_valid(
        n,
        config.b_max,
        config.pi,
        config.seed,
        min_ones,
        min_zeros,
    )?;
    let target = config
        .target_coordinate
        .unwrap_or_else(|| system.dim_first());
    let dim_total = system.dim_total();
    if target >= dim_total {
        return Err(Error::InvalidArgument(format!(
            "target coordinate {target} out of range 0..{dim_total}"
        )));
    }

    let outcomes: Vec<Result<(DVector<f64>, DMatrix<f64>)>> = (0..config.b_max)
        .into_par_iter()
        .map(|b| {
            let delta = splits.column(b);
            let fit = fit_single_split(system, data, delta, &config.solver)?;
            let rows =
                influence_rows_single(system, data, delta, fit.theta(), fit.beta(), &config.solver)?;
            let mut combined = DVector::zeros(dim_total);
            combined.rows_mut(0, system.dim_first()).copy_from(fit.theta());
            combined
                .rows_mut(system.dim_first(), system.dim_second())
                .copy_from(fit.beta());
            Ok((combined, rows))
        })
        .collect();

    let per_split: Vec<PerSplitRecord> = outcomes
        .iter()
        .enumerate()
        .map(|(b, outcome)| match outcome {
            Ok((combined, _)) => PerSplitRecord {
                split: b,
                converged: true,
                estimate: combined[target],
                message: String::new(),
            },
            Err(e) => PerSplitRecord {
                split: b,
                converged: false,
                estimate: f64::NAN,
                message: e.to_string(),
            },
        })
        .collect();

    let mut points = Vec::with_capacity(config.b_max);
    let mut used = 0usize;
    let mut estimate_sum = DVector::zeros(dim_total);
    let mut rows_sum = DMatrix::zeros(n, dim_total);
    for (b, outcome) in outcomes.iter().enumerate() {
        if let Ok((combined, rows)) = outcome {
            used += 1;
            estimate_sum += combined;
            rows_sum += rows;
        }
        if used == 0 {
            points.push(BSweepPoint {
                b: b + 1,
                b_used: 0,
                estimate: f64::NAN,
                lower: f64::NAN,
                upper: f64::NAN,
            });
            continue;
        }
        let scale = 1.0 / used as f64;
        let estimate = estimate_sum[target] * scale;
        let rows_mean = &rows_sum * scale;
        let covariance = sandwich_covariance(rows_mean)?;
        let (lower, upper) = wald_interval(estimate, covariance.variance(target), config.level)?;
        points.push(BSweepPoint {
            b: b + 1,
            b_used: used,
            estimate,
            lower,
            upper,
        });
    }

    Ok(BSweepReport {
        b_max: config.b_max,
        pi: config.pi,
        level: config.level,
        seed: config.seed,
        target_coordinate: target,
        points,
        per_split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{mean_pair, simulate_mean, MeanPairSpec};
    use approx::assert_relative_eq;

    fn sweep_fixture() -> (TwoStageSystem<f64>, Dataset<f64>, BSweepConfig) {
        let data = simulate_mean(&MeanPairSpec::default(), 80, 3).unwrap();
        let config = BSweepConfig {
            b_max: 12,
            seed: 5,
            ..BSweepConfig::default()
        };
        (mean_pair(), data, config)
    }

    #[test]
    fn points_are_running_means_of_per_split_estimates() {
        let (system, data, config) = sweep_fixture();
        let report = run_b_sweep(&system, &data, &config).unwrap();
        assert_eq!(report.points.len(), 12);
        let mut sum = 0.0;
        for (i, point) in report.points.iter().enumerate() {
            assert!(report.per_split[i].converged);
            sum += report.per_split[i].estimate;
            assert_relative_eq!(point.estimate, sum / (i + 1) as f64, epsilon = 1e-12);
            assert!(point.lower < point.estimate && point.estimate < point.upper);
            assert_eq!(point.b_used, i + 1);
        }
    }

    #[test]
    fn sweep_is_reproducible() {
        let (system, data, config) = sweep_fixture();
        let a = run_b_sweep(&system, &data, &config).unwrap();
        let b = run_b_sweep(&system, &data, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matches_the_multi_split_pipeline_at_full_length() {
        let (system, data, config) = sweep_fixture();
        let report = run_b_sweep(&system, &data, &config).unwrap();
        let (min_ones, min_zeros) = validity_minimums(data.n_rows(), 1, 1);
        let splits = SplitAssignment::generate_valid(
            data.n_rows(),
            config.b_max,
            config.pi,
            config.seed,
            min_ones,
            min_zeros,
        )
        .unwrap();
        let inference =
            crate::split::fit_with_covariance(&system, &data, &splits, &config.solver).unwrap();
        let last = report.points.last().unwrap();
        assert_relative_eq!(
            last.estimate,
            inference.fit.combined()[1],
            epsilon = 1e-12
        );
        let (lower, upper) = wald_interval(
            inference.fit.combined()[1],
            inference.covariance.variance(1),
            config.level,
        )
        .unwrap();
        assert_relative_eq!(last.lower, lower, epsilon = 1e-12);
        assert_relative_eq!(last.upper, upper, epsilon = 1e-12);
    }

    #[test]
    fn zero_b_max_is_rejected() {
        let (system, data, mut config) = sweep_fixture();
        config.b_max = 0;
        assert!(run_b_sweep(&system, &data, &config).is_err());
    }
}
