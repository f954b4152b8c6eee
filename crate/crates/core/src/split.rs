//! Sample splitting: assignment generation, two-stage fits on splits,
//! influence rows, sandwich covariance, and Wald intervals.
//!
//! One split column assigns each observation to the first stage (indicator
//! 1) or the second stage (indicator 0). Estimates from `B` independent
//! columns are averaged; their joint covariance is estimated from the
//! per-observation influence rows averaged over the same columns, which
//! accounts for both stages and for the split randomness itself.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numdiff::numerical_jacobian;
use crate::scalar::{real, to_f64, Scalar};
use crate::solve::{average_jacobian, solve_weighted, ParamEstimate, SolverConfig};
use crate::system::{EstimatingEquation, TwoStageSystem};

/// Bernoulli split indicators for `B` independent splits of `n` rows.
///
/// Stored column-major: column `b` holds the stage-1 membership indicator of
/// every observation under split `b`. Regenerating with the same
/// `(n, b_count, pi, seed)` reproduces the matrix bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    n: usize,
    b_count: usize,
    pi: f64,
    seed: u64,
    regenerated: usize,
    indicators: Vec<u8>,
}

impl SplitAssignment {
    /// Draws `b_count` i.i.d. Bernoulli(`pi`) columns from a seeded stream.
    ///
    /// No validity rule is applied; see [`SplitAssignment::generate_valid`]
    /// for the variant that redraws unusable columns.
    pub fn generate(n: usize, b_count: usize, pi: f64, seed: u64) -> Result<Self> {
        Self::generate_impl(n, b_count, pi, seed, None)
    }

    /// Like [`SplitAssignment::generate`], but a column with fewer than
    /// `min_ones` ones or `min_zeros` zeros is discarded and redrawn from
    /// the same stream. Redraws are counted in
    /// [`SplitAssignment::regenerated`]; determinism is preserved because
    /// the redraw consumes the next values of the seeded stream.
    pub fn generate_valid(
        n: usize,
        b_count: usize,
        pi: f64,
        seed: u64,
        min_ones: usize,
        min_zeros: usize,
    ) -> Result<Self> {
        if min_ones + min_zeros > n {
            return Err(Error::InvalidArgument(format!(
                "validity rule needs at least {} rows, dataset has {n}",
                min_ones + min_zeros
            )));
        }
        Self::generate_impl(n, b_count, pi, seed, Some((min_ones, min_zeros)))
    }

    fn generate_impl(
        n: usize,
        b_count: usize,
        pi: f64,
        seed: u64,
        rule: Option<(usize, usize)>,
    ) -> Result<Self> {
        if n == 0 || b_count == 0 {
            return Err(Error::InvalidArgument(format!(
                "split assignment needs n ≥ 1 and b_count ≥ 1, got n={n}, b_count={b_count}"
            )));
        }
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split probability must lie strictly inside (0, 1), got {pi}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indicators = vec![0u8; n * b_count];
        let mut regenerated = 0usize;
        let budget = 10_000 + 1_000 * b_count;
        for b in 0..b_count {
            loop {
                let column = &mut indicators[b * n..(b + 1) * n];
                let mut ones = 0usize;
                for cell in column.iter_mut() {
                    let draw = u8::from(rng.random_bool(pi));
                    ones += usize::from(draw);
                    *cell = draw;
                }
                match rule {
                    Some((min_ones, min_zeros))
                        if ones < min_ones || n - ones < min_zeros =>
                    {
                        regenerated += 1;
                        if regenerated > budget {
                            return Err(Error::DegenerateSplit(format!(
                                "gave up after {regenerated} redraws: pi={pi} cannot \
                                 produce columns with ≥{min_ones} ones and ≥{min_zeros} \
                                 zeros out of {n}"
                            )));
                        }
                    }
                    _ => break,
                }
            }
        }
        Ok(Self {
            n,
            b_count,
            pi,
            seed,
            regenerated,
            indicators,
        })
    }

    /// Number of observations per column.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of split columns.
    pub fn b_count(&self) -> usize {
        self.b_count
    }

    /// Stage-1 membership probability the columns were drawn with.
    pub fn pi(&self) -> f64 {
        self.pi
    }

    /// Seed the columns were drawn from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// How many candidate columns the validity rule discarded.
    pub fn regenerated(&self) -> usize {
        self.regenerated
    }

    /// Indicator column for split `b` (1 = stage one, 0 = stage two).
    pub fn column(&self, b: usize) -> &[u8] {
        &self.indicators[b * self.n..(b + 1) * self.n]
    }
}

/// Minimum ones/zeros a split column must carry to be usable.
///
/// The working rule is `max(dim, 5)` on each side; when the dataset is too
/// small for that (tiny fixtures), it degrades to the bare identifiability
/// floor of `dim` observations per stage.
pub fn validity_minimums(n: usize, dim_first: usize, dim_second: usize) -> (usize, usize) {
    let ones = dim_first.max(5);
    let zeros = dim_second.max(5);
    if ones + zeros <= n {
        (ones, zeros)
    } else {
        (dim_first, dim_second)
    }
}

/// Converged two-stage fit on one split column.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFit<S: Scalar> {
    /// First-stage solve (converged).
    pub first: ParamEstimate<S>,
    /// Second-stage solve with the first stage plugged in (converged).
    pub second: ParamEstimate<S>,
}

impl<S: Scalar> SplitFit<S> {
    /// First-stage estimate.
    pub fn theta(&self) -> &DVector<S> {
        &self.first.value
    }

    /// Second-stage estimate.
    pub fn beta(&self) -> &DVector<S> {
        &self.second.value
    }
}

/// Why one split column failed to fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitFailure {
    /// Zero-based split column index.
    pub split: usize,
    /// Rendered error chain.
    pub message: String,
}

/// Estimates averaged over the non-failed split columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSplitFit<S: Scalar> {
    /// Mean first-stage estimate over used splits.
    pub theta_bar: DVector<S>,
    /// Mean second-stage estimate over used splits.
    pub beta_bar: DVector<S>,
    /// Columns attempted.
    pub b_total: usize,
    /// Columns that produced a converged two-stage fit.
    pub b_used: usize,
    /// Per-column outcome, index-aligned with the assignment columns.
    pub fits: Vec<Option<SplitFit<S>>>,
    /// Failure descriptions for the dropped columns.
    pub failures: Vec<SplitFailure>,
}

impl<S: Scalar> MultiSplitFit<S> {
    /// Combined (θ̄, β̄) vector in block order.
    pub fn combined(&self) -> DVector<S> {
        let mut out = DVector::zeros(self.theta_bar.len() + self.beta_bar.len());
        out.rows_mut(0, self.theta_bar.len()).copy_from(&self.theta_bar);
        out.rows_mut(self.theta_bar.len(), self.beta_bar.len())
            .copy_from(&self.beta_bar);
        out
    }
}

/// Fits both stages on one split column.
///
/// Stage 1 runs on the indicator-1 rows, stage 2 on the indicator-0 rows
/// with the stage-1 estimate plugged in and held fixed. Either stage failing
/// to converge is an error (tagged with its stage), so callers can drop the
/// split rather than average garbage.
pub fn fit_single_split<S: Scalar>(
    system: &TwoStageSystem<S>,
    data: &Dataset<S>,
    delta: &[u8],
    config: &SolverConfig<S>,
) -> Result<SplitFit<S>> {
    let n = data.n_rows();
    if delta.len() != n {
        return Err(Error::InvalidArgument(format!(
            "split column has {} entries for {n} observations",
            delta.len()
        )));
    }
    let ones = delta.iter().filter(|&&d| d != 0).count();
    if ones == 0 {
        return Err(Error::DegenerateSplit("column is all zeros".into()));
    }
    if ones == n {
        return Err(Error::DegenerateSplit("column is all ones".into()));
    }

    let w_first: Vec<S> = delta
        .iter()
        .map(|&d| if d != 0 { S::one() } else { S::zero() })
        .collect();
    let w_second: Vec<S> = delta
        .iter()
        .map(|&d| if d != 0 { S::zero() } else { S::one() })
        .collect();

    let first = solve_weighted(&system.first, data, &w_first, None, config)
        .and_then(ParamEstimate::require_converged)
        .map_err(|e| e.in_stage(1))?;

    let plugged = system.second.at(&first.value);
    let second = solve_weighted(&plugged, data, &w_second, None, config)
        .and_then(ParamEstimate::require_converged)
        .map_err(|e| e.in_stage(2))?;

    Ok(SplitFit { first, second })
}

/// Fits every split column and averages the successes.
///
/// Columns are fit independently (in parallel), results are merged in column
/// order, so the outcome is identical for any thread count. Failed columns
/// are dropped from the averages and reported in
/// [`MultiSplitFit::failures`]; it is an error for every column to fail.
pub fn fit_multi_split<S: Scalar>(
    system: &TwoStageSystem<S>,
    data: &Dataset<S>,
    splits: &SplitAssignment,
    config: &SolverConfig<S>,
) -> Result<MultiSplitFit<S>> {
    if splits.n() != data.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "assignment covers {} rows, dataset has {}",
            splits.n(),
            data.n_rows()
        )));
    }
    let outcomes: Vec<Result<SplitFit<S>>> = (0..splits.b_count())
        .into_par_iter()
        .map(|b| fit_single_split(system, data, splits.column(b), config))
        .collect();
    aggregate_fits(system, outcomes)
}

fn aggregate_fits<S: Scalar>(
    system: &TwoStageSystem<S>,
    outcomes: Vec<Result<SplitFit<S>>>,
) -> Result<MultiSplitFit<S>> {
    let b_total = outcomes.len();
    let mut fits = Vec::with_capacity(b_total);
    let mut failures = Vec::new();
    let mut theta_sum = DVector::zeros(system.dim_first());
    let mut beta_sum = DVector::zeros(system.dim_second());
    let mut b_used = 0usize;
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(fit) => {
                theta_sum += fit.theta();
                beta_sum += fit.beta();
                b_used += 1;
                fits.push(Some(fit));
            }
            Err(err) => {
                failures.push(SplitFailure {
                    split: b,
                    message: err.in_split(b).to_string(),
                });
                fits.push(None);
            }
        }
    }
    if b_used == 0 {
        return Err(Error::AllSplitsFailed { attempted: b_total });
    }
    let inv = real::<S>(b_used as f64).recip();
    Ok(MultiSplitFit {
        theta_bar: theta_sum * inv,
        beta_bar: beta_sum * inv,
        b_total,
        b_used,
        fits,
        failures,
    })
}

/// Per-observation influence rows of one split's two-stage estimate.
///
/// With Ω̂ = n⁻¹ Σ δᵢ ∂Ψᵢ/∂θᵀ, Λ̂ = n⁻¹ Σ (1−δᵢ) ∂𝒦ᵢ/∂βᵀ, and
/// Δ̂ = n⁻¹ Σ (1−δᵢ) ∂𝒦ᵢ/∂θᵀ (all at the fitted values), the row for
/// observation `i` is the concatenation
///
/// ```text
/// θ block:  −Ω̂⁻¹ δᵢ Ψᵢ
/// β block:  −Λ̂⁻¹ (1−δᵢ) 𝒦ᵢ  +  Λ̂⁻¹ Δ̂ Ω̂⁻¹ δᵢ Ψᵢ
/// ```
///
/// so stage-1 rows carry no 𝒦 term and stage-2 rows no Ψ term. Δ̂ uses the
/// chain rule through the declared transform when the model has one.
pub fn influence_rows_single<S: Scalar>(
    system: &TwoStageSystem<S>,
    data: &Dataset<S>,
    delta: &[u8],
    theta: &DVector<S>,
    beta: &DVector<S>,
    config: &SolverConfig<S>,
) -> Result<DMatrix<S>> {
    let n = data.n_rows();
    if delta.len() != n {
        return Err(Error::InvalidArgument(format!(
            "split column has {} entries for {n} observations",
            delta.len()
        )));
    }
    let p = system.dim_first();
    let q = system.dim_second();

    let w_first: Vec<S> = delta
        .iter()
        .map(|&d| if d != 0 { S::one() } else { S::zero() })
        .collect();
    let w_second: Vec<S> = delta
        .iter()
        .map(|&d| if d != 0 { S::zero() } else { S::one() })
        .collect();

    let omega = average_jacobian(&system.first, data, &w_first, theta, config)?;
    let plugged = system.second.at(theta);
    let lambda = average_jacobian(&plugged, data, &w_second, beta, config)?;
    let delta_mat = plugin_average_jacobian(system, data, &w_second, theta, beta, config)?;

    let omega_inv = omega.try_inverse().ok_or_else(|| Error::SingularJacobian {
        context: "first-stage average jacobian".into(),
    })?;
    let lambda_inv = lambda.try_inverse().ok_or_else(|| Error::SingularJacobian {
        context: "second-stage average jacobian".into(),
    })?;
    // q×p matrix carrying the plug-in correction onto stage-1 scores.
    let cross = &lambda_inv * &delta_mat * &omega_inv;

    let mut rows = DMatrix::zeros(n, p + q);
    for i in 0..n {
        let row = data.row(i);
        if delta[i] != 0 {
            let psi = system.first.evaluate(row, theta);
            let theta_block = -(&omega_inv * &psi);
            let beta_block = &cross * &psi;
            for j in 0..p {
                rows[(i, j)] = theta_block[j];
            }
            for j in 0..q {
                rows[(i, p + j)] = beta_block[j];
            }
        } else {
            let kappa = system.second.evaluate(row, beta, theta);
            let beta_block = -(&lambda_inv * &kappa);
            for j in 0..q {
                rows[(i, p + j)] = beta_block[j];
            }
        }
    }
    if !rows.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteEvaluation {
            context: "influence rows".into(),
        });
    }
    Ok(rows)
}

/// `n⁻¹ Σᵢ wᵢ ∂𝒦ᵢ/∂θᵀ` at `(beta, theta)` — the plug-in block Δ̂.
pub(crate) fn plugin_average_jacobian<S: Scalar>(
    system: &TwoStageSystem<S>,
    data: &Dataset<S>,
    weights: &[S],
    theta: &DVector<S>,
    beta: &DVector<S>,
    config: &SolverConfig<S>,
) -> Result<DMatrix<S>> {
    let n = data.n_rows();
    let p = system.dim_first();
    let q = system.dim_second();
    let inv_n = real::<S>(n as f64).recip();
    if system.second.has_analytic_plugin_jacobian() {
        let mut acc = DMatrix::zeros(q, p);
        for (i, &w) in weights.iter().enumerate() {
            if w > S::zero() {
                let jac = system
                    .second
                    .plugin_jacobian(data.row(i), beta, theta, config.jacobian_step)?;
                acc += jac * w;
            }
        }
        Ok(acc * inv_n)
    } else {
        // Differentiate the aggregated mean once; equals the row average by
        // linearity of central differences.
        let mean = |point: &DVector<S>| -> Result<DVector<S>> {
            let mut acc = DVector::zeros(q);
            for (i, &w) in weights.iter().enumerate() {
                if w > S::zero() {
                    acc.axpy(w, &system.second.evaluate(data.row(i), beta, point), S::one());
                }
            }
            Ok(acc * inv_n)
        };
        numerical_jacobian(mean, theta, q, config.jacobian_step)
    }
}

/// Entrywise mean of per-split influence rows (all the same shape).
pub fn influence_rows_multi<S: Scalar>(per_split: &[DMatrix<S>]) -> Result<DMatrix<S>> {
    let first = per_split.first().ok_or_else(|| {
        Error::InvalidArgument("influence averaging needs at least one split".into())
    })?;
    let shape = first.shape();
    let mut acc = DMatrix::zeros(shape.0, shape.1);
    for rows in per_split {
        if rows.shape() != shape {
            return Err(Error::InvalidArgument(format!(
                "influence row shapes differ: {:?} vs {:?}",
                rows.shape(),
                shape
            )));
        }
        acc += rows;
    }
    Ok(acc * real::<S>(per_split.len() as f64).recip())
}

/// Joint covariance estimate built from influence rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichCovariance<S: Scalar> {
    /// `n⁻¹ ·` sample covariance (divisor `n − 1`) of the rows.
    pub covariance: DMatrix<S>,
    /// Number of observations the rows came from.
    pub n: usize,
    /// The influence rows the estimate was built from.
    pub rows: DMatrix<S>,
}

impl<S: Scalar> SandwichCovariance<S> {
    /// Variance of one coordinate of the combined (θ, β) vector.
    pub fn variance(&self, coordinate: usize) -> S {
        self.covariance[(coordinate, coordinate)]
    }
}

/// Covariance of the estimate: `n⁻¹` times the sample covariance of the
/// influence rows (sample covariance with divisor `n − 1`).
pub fn sandwich_covariance<S: Scalar>(rows: DMatrix<S>) -> Result<SandwichCovariance<S>> {
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: n,
            context: "sample covariance of influence rows".into(),
        });
    }
    let dim = rows.ncols();
    let inv_n = real::<S>(n as f64).recip();
    let mut means = DVector::zeros(dim);
    for j in 0..dim {
        means[j] = rows.column(j).iter().copied().fold(S::zero(), |a, b| a + b) * inv_n;
    }
    let mut centered = rows.clone();
    for i in 0..n {
        for j in 0..dim {
            centered[(i, j)] -= means[j];
        }
    }
    // centeredᵀ · centered accumulates entries (i,j) and (j,i) in the same
    // row order, so the product is symmetric to the last bit.
    let sample_cov = centered.tr_mul(&centered) * real::<S>((n - 1) as f64).recip();
    let covariance = sample_cov * inv_n;
    if !covariance.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteEvaluation {
            context: "sandwich covariance".into(),
        });
    }
    Ok(SandwichCovariance {
        covariance,
        n,
        rows,
    })
}

/// Standard normal quantile at probability `p ∈ (0, 1)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidLevel { level: p });
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal is well formed");
    Ok(normal.inverse_cdf(p))
}

/// Two-sided Wald interval `estimate ± z · √variance` at the given level.
pub fn wald_interval<S: Scalar>(estimate: S, variance: S, level: f64) -> Result<(S, S)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel { level });
    }
    if variance < S::zero() {
        return Err(Error::NegativeVariance {
            variance: to_f64(variance),
        });
    }
    let z = real::<S>(normal_quantile(0.5 + level / 2.0)?);
    let half = z * variance.sqrt();
    Ok((estimate - half, estimate + half))
}

/// A multi-split fit together with its sandwich covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitInference<S: Scalar> {
    /// Averaged estimates and per-split outcomes.
    pub fit: MultiSplitFit<S>,
    /// Covariance of the combined (θ̄, β̄) vector.
    pub covariance: SandwichCovariance<S>,
}

/// Fits every split column, computes each column's influence rows at its own
/// estimates, averages rows over the used columns, and wraps up the sandwich
/// covariance. One-stop shop for the full split pipeline after assignment
/// generation.
pub fn fit_with_covariance<S: Scalar>(
    system: &TwoStageSystem<S>,
    data: &Dataset<S>,
    splits: &SplitAssignment,
    config: &SolverConfig<S>,
) -> Result<SplitInference<S>> {
    if splits.n() != data.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "assignment covers {} rows, dataset has {}",
            splits.n(),
            data.n_rows()
        )));
    }
    let outcomes: Vec<Result<(SplitFit<S>, DMatrix<S>)>> = (0..splits.b_count())
        .into_par_iter()
        .map(|b| {
            let delta = splits.column(b);
            let fit = fit_single_split(system, data, delta, config)?;
            let rows =
                influence_rows_single(system, data, delta, fit.theta(), fit.beta(), config)
                    .map_err(|e| e.in_split(b))?;
            Ok((fit, rows))
        })
        .collect();

    let mut fit_outcomes = Vec::with_capacity(outcomes.len());
    let mut used_rows = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((fit, rows)) => {
                used_rows.push(rows);
                fit_outcomes.push(Ok(fit));
            }
            Err(e) => fit_outcomes.push(Err(e)),
        }
    }
    let fit = aggregate_fits(system, fit_outcomes)?;
    let mean_rows = influence_rows_multi(&used_rows)?;
    let covariance = sandwich_covariance(mean_rows)?;
    Ok(SplitInference { fit, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::mean_pair;

    /// The worked fixture: W = (1,2,3,4), Y = (5,6,7,8), δ = (1,1,0,0).
    fn fixture() -> (TwoStageSystem<f64>, Dataset<f64>, Vec<u8>) {
        let data = Dataset::from_columns(vec![
            ("W".into(), vec![1.0, 2.0, 3.0, 4.0]),
            ("Y".into(), vec![5.0, 6.0, 7.0, 8.0]),
        ])
        .unwrap();
        (mean_pair(), data, vec![1, 1, 0, 0])
    }

    #[test]
    fn assignment_is_reproducible_and_respects_pi() {
        let a = SplitAssignment::generate(10_000, 1, 0.5, 42).unwrap();
        let b = SplitAssignment::generate(10_000, 1, 0.5, 42).unwrap();
        assert_eq!(a, b);
        let ones = a.column(0).iter().filter(|&&d| d == 1).count();
        let share = ones as f64 / 10_000.0;
        assert!((share - 0.5).abs() < 0.02, "share = {share}");
    }

    #[test]
    fn extreme_pi_yields_constant_columns_without_the_rule() {
        let a = SplitAssignment::generate(50, 3, 0.999_999, 7).unwrap();
        for b in 0..3 {
            assert!(a.column(b).iter().all(|&d| d == 1));
        }
    }

    #[test]
    fn validity_rule_redraws_and_counts() {
        // π = 0.02 on 40 rows rarely yields 5 ones, so redraws must happen.
        let a = SplitAssignment::generate_valid(40, 5, 0.02, 3, 5, 5).unwrap();
        assert!(a.regenerated() > 0);
        for b in 0..5 {
            let ones = a.column(b).iter().filter(|&&d| d == 1).count();
            assert!(ones >= 5 && 40 - ones >= 5);
        }
    }

    #[test]
    fn impossible_validity_rule_errors_out() {
        assert!(SplitAssignment::generate_valid(6, 1, 0.5, 1, 5, 5).is_err());
    }

    #[test]
    fn minimums_degrade_for_tiny_samples() {
        assert_eq!(validity_minimums(100, 3, 1), (5, 5));
        assert_eq!(validity_minimums(100, 7, 1), (7, 5));
        assert_eq!(validity_minimums(4, 1, 1), (1, 1));
    }

    #[test]
    fn split_fit_reproduces_the_hand_values() {
        let (system, data, delta) = fixture();
        let fit = fit_single_split(&system, &data, &delta, &SolverConfig::default()).unwrap();
        // θ̂ = mean(1, 2) = 1.5 and β̂ = mean(7, 8) − θ̂ = 6.0.
        assert!((fit.theta()[0] - 1.5).abs() < 1e-12);
        assert!((fit.beta()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn plug_in_is_not_refit_by_stage_two() {
        let (system, data, delta) = fixture();
        let fit = fit_single_split(&system, &data, &delta, &SolverConfig::default()).unwrap();
        let theta_again =
            solve_weighted(&system.first, &data, &[1.0, 1.0, 0.0, 0.0], None, &Default::default())
                .unwrap();
        assert_eq!(fit.first.value, theta_again.value);
    }

    #[test]
    fn constant_columns_are_rejected() {
        let (system, data, _) = fixture();
        let cfg = SolverConfig::default();
        let all_ones = fit_single_split(&system, &data, &[1, 1, 1, 1], &cfg).unwrap_err();
        assert!(matches!(all_ones, Error::DegenerateSplit(_)), "{all_ones}");
        let all_zeros = fit_single_split(&system, &data, &[0, 0, 0, 0], &cfg).unwrap_err();
        assert!(matches!(all_zeros, Error::DegenerateSplit(_)), "{all_zeros}");
    }

    #[test]
    fn average_jacobians_match_the_hand_values() {
        let (system, data, delta) = fixture();
        let cfg = SolverConfig::default();
        let theta = DVector::from_vec(vec![1.5]);
        let beta = DVector::from_vec(vec![6.0]);
        let w1: Vec<f64> = delta.iter().map(|&d| f64::from(d)).collect();
        let w2: Vec<f64> = delta.iter().map(|&d| 1.0 - f64::from(d)).collect();
        // Ψ and 𝒦 both have slope −1, two active rows out of four: −1/2.
        let omega = average_jacobian(&system.first, &data, &w1, &theta, &cfg).unwrap();
        assert!((omega[(0, 0)] + 0.5).abs() < 1e-12);
        let plugged = system.second.at(&theta);
        let lambda = average_jacobian(&plugged, &data, &w2, &beta, &cfg).unwrap();
        assert!((lambda[(0, 0)] + 0.5).abs() < 1e-12);
        let delta_mat =
            plugin_average_jacobian(&system, &data, &w2, &theta, &beta, &cfg).unwrap();
        assert!((delta_mat[(0, 0)] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn influence_rows_match_the_hand_values() {
        let (system, data, delta) = fixture();
        let theta = DVector::from_vec(vec![1.5]);
        let beta = DVector::from_vec(vec![6.0]);
        let rows = influence_rows_single(
            &system,
            &data,
            &delta,
            &theta,
            &beta,
            &SolverConfig::default(),
        )
        .unwrap();
        // Row 1 θ block: −Ω̂⁻¹ δ Ψ = 2(W₁ − 1.5) = −1; row 3 β block:
        // −Λ̂⁻¹ 𝒦 = 2(7 − 6 − 1.5) = −1.
        assert!((rows[(0, 0)] - (-1.0)).abs() < 1e-9);
        assert!((rows[(2, 1)] - (-1.0)).abs() < 1e-9);
        // Stage-2 rows carry no Ψ term in the θ block and stage-1 rows no 𝒦
        // term beyond the plug-in correction.
        assert_eq!(rows[(2, 0)], 0.0);
        assert_eq!(rows[(3, 0)], 0.0);
    }

    #[test]
    fn influence_columns_average_to_zero_at_the_root() {
        let (system, data, delta) = fixture();
        let fit = fit_single_split(&system, &data, &delta, &SolverConfig::default()).unwrap();
        let rows = influence_rows_single(
            &system,
            &data,
            &delta,
            fit.theta(),
            fit.beta(),
            &SolverConfig::default(),
        )
        .unwrap();
        for j in 0..rows.ncols() {
            let mean: f64 = rows.column(j).iter().sum::<f64>() / rows.nrows() as f64;
            assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
        }
    }

    #[test]
    fn sandwich_matches_the_hand_covariance() {
        let (system, data, delta) = fixture();
        let theta = DVector::from_vec(vec![1.5]);
        let beta = DVector::from_vec(vec![6.0]);
        let rows = influence_rows_single(
            &system,
            &data,
            &delta,
            &theta,
            &beta,
            &SolverConfig::default(),
        )
        .unwrap();
        let sw = sandwich_covariance(rows).unwrap();
        // Influence columns are (−1, 1, 0, 0) and (1, −1, −1, 1):
        // n⁻¹·S gives [[1/6, −1/6], [−1/6, 1/3]].
        assert!((sw.covariance[(0, 0)] - 1.0 / 6.0).abs() < 1e-9);
        assert!((sw.covariance[(0, 1)] - (-1.0 / 6.0)).abs() < 1e-9);
        assert!((sw.covariance[(1, 1)] - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(sw.covariance[(0, 1)], sw.covariance[(1, 0)]);
    }

    #[test]
    fn identical_rows_have_zero_covariance() {
        let rows = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 1.0, -2.0, 1.0, -2.0]);
        let sw = sandwich_covariance(rows).unwrap();
        assert!(sw.covariance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicating_every_row_halves_the_covariance() {
        let rows = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 4.0]);
        let once = sandwich_covariance(rows.clone()).unwrap();
        let mut doubled = DMatrix::zeros(6, 1);
        doubled.rows_mut(0, 3).copy_from(&rows);
        doubled.rows_mut(3, 3).copy_from(&rows);
        let twice = sandwich_covariance(doubled).unwrap();
        // Sample covariance shrinks by (n−1) scaling: 2·(5/6)... compute
        // directly: S once = var{1,2,4} = 7/3, cov = 7/9. Doubled: same
        // population spread but 2n rows: S = 14/5·(...) — assert the exact
        // halving of n⁻¹ only through recomputation:
        let s_once: f64 = 7.0 / 3.0;
        assert!((once.covariance[(0, 0)] - s_once / 3.0).abs() < 1e-12);
        let mean: f64 = 7.0 / 3.0;
        let ss: f64 = [1.0f64, 2.0, 4.0]
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            * 2.0;
        let s_twice = ss / 5.0;
        assert!((twice.covariance[(0, 0)] - s_twice / 6.0).abs() < 1e-12);
    }

    #[test]
    fn multi_split_with_one_column_matches_single() {
        let (system, data, delta) = fixture();
        let mut assignment = SplitAssignment::generate(4, 1, 0.5, 1).unwrap();
        assignment.indicators.copy_from_slice(&delta);
        let single = fit_single_split(&system, &data, &delta, &SolverConfig::default()).unwrap();
        let multi =
            fit_multi_split(&system, &data, &assignment, &SolverConfig::default()).unwrap();
        assert_eq!(multi.b_used, 1);
        assert_eq!(multi.theta_bar, single.first.value);
        assert_eq!(multi.beta_bar, single.second.value);
    }

    #[test]
    fn identical_columns_average_to_the_single_fit() {
        let (system, data, delta) = fixture();
        let mut assignment = SplitAssignment::generate(4, 2, 0.5, 1).unwrap();
        assignment.indicators[..4].copy_from_slice(&delta);
        assignment.indicators[4..].copy_from_slice(&delta);
        let single = fit_single_split(&system, &data, &delta, &SolverConfig::default()).unwrap();
        let multi =
            fit_multi_split(&system, &data, &assignment, &SolverConfig::default()).unwrap();
        assert_eq!(multi.b_used, 2);
        assert!((multi.theta_bar[0] - single.theta()[0]).abs() < 1e-15);
        assert!((multi.beta_bar[0] - single.beta()[0]).abs() < 1e-15);
    }

    #[test]
    fn failed_columns_are_dropped_and_reported() {
        let (system, data, delta) = fixture();
        let mut assignment = SplitAssignment::generate(4, 2, 0.5, 1).unwrap();
        assignment.indicators[..4].copy_from_slice(&delta);
        assignment.indicators[4..].copy_from_slice(&[1, 1, 1, 1]); // degenerate
        let multi =
            fit_multi_split(&system, &data, &assignment, &SolverConfig::default()).unwrap();
        assert_eq!(multi.b_used, 1);
        assert_eq!(multi.failures.len(), 1);
        assert_eq!(multi.failures[0].split, 1);
        assert!(multi.failures[0].message.contains("split 1"));
    }

    #[test]
    fn all_columns_failing_is_an_error() {
        let (system, data, _) = fixture();
        let mut assignment = SplitAssignment::generate(4, 1, 0.5, 1).unwrap();
        assignment.indicators.copy_from_slice(&[1, 1, 1, 1]);
        let err =
            fit_multi_split(&system, &data, &assignment, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::AllSplitsFailed { attempted: 1 }), "{err}");
    }

    #[test]
    fn influence_multi_averages_entrywise() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[3.0, 2.0, 1.0, 0.0]);
        let mean = influence_rows_multi(&[a.clone(), b]).unwrap();
        assert_eq!(mean, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
        assert_eq!(influence_rows_multi(&[a.clone()]).unwrap(), a);
        assert!(influence_rows_multi::<f64>(&[]).is_err());
    }

    #[test]
    fn wald_interval_matches_the_normal_quantile() {
        let (lo, hi): (f64, f64) = wald_interval(0.0, 1.0, 0.95).unwrap();
        assert!((hi - 1.959_963_984_540_054).abs() < 1e-8, "hi = {hi}");
        assert!((lo + hi).abs() < 1e-12);
        let (lo5, hi5): (f64, f64) = wald_interval(2.0, 4.0, 0.5).unwrap();
        let half = 0.674_489_750_196_081_7 * 2.0;
        assert!((hi5 - (2.0 + half)).abs() < 1e-9);
        assert!((lo5 - (2.0 - half)).abs() < 1e-9);
    }

    #[test]
    fn wald_interval_rejects_bad_inputs() {
        assert!(matches!(
            wald_interval(0.0, -1.0, 0.95).unwrap_err(),
            Error::NegativeVariance { .. }
        ));
        assert!(matches!(
            wald_interval(0.0, 1.0, 1.0).unwrap_err(),
            Error::InvalidLevel { .. }
        ));
        assert!(matches!(
            wald_interval(0.0, 1.0, 0.0).unwrap_err(),
            Error::InvalidLevel { .. }
        ));
    }

    #[test]
    fn interval_width_recovers_the_standard_error() {
        // A reported interval (−0.041, −0.012) around −0.026 at 95% pins the
        // standard error near 0.0074; its midpoint −0.0265 rounds to −0.026.
        let (lo, hi) = (-0.041f64, -0.012f64);
        let z = normal_quantile(0.975).unwrap();
        let se = (hi - lo) / (2.0 * z);
        assert!((se - 0.0074).abs() < 1e-4, "se = {se}");
        let mid = 0.5 * (lo + hi);
        assert!((mid - (-0.026)).abs() <= 5e-4 + 1e-12, "mid = {mid}");
        let (lo2, hi2) = wald_interval(mid, se * se, 0.95).unwrap();
        assert!((lo2 - lo).abs() < 1e-12);
        assert!((hi2 - hi).abs() < 1e-12);
    }

    #[test]
    fn pipeline_wrapper_agrees_with_the_pieces() {
        let (system, data, delta) = fixture();
        let mut assignment = SplitAssignment::generate(4, 1, 0.5, 1).unwrap();
        assignment.indicators.copy_from_slice(&delta);
        let cfg = SolverConfig::default();
        let inference = fit_with_covariance(&system, &data, &assignment, &cfg).unwrap();
        let fit = fit_single_split(&system, &data, &delta, &cfg).unwrap();
        let rows =
            influence_rows_single(&system, &data, &delta, fit.theta(), fit.beta(), &cfg).unwrap();
        let sw = sandwich_covariance(rows).unwrap();
        assert_eq!(inference.covariance.covariance, sw.covariance);
        assert_eq!(inference.fit.theta_bar, fit.first.value);
    }
}
