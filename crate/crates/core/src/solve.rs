//! Damped Newton root finding for weighted estimating equations.
//!
//! The target is a root of the weighted score sum `Σᵢ wᵢ ψ(rowᵢ, x) = 0`.
//! Convergence is judged on the infinity norm of the *weighted mean* score
//! `Σ wᵢ ψᵢ / Σ wᵢ`, which makes the stopping rule invariant under rescaling
//! all weights by a positive constant. Steps are damped by halving until the
//! residual norm decreases; a trial point with a non-finite score counts as
//! no improvement, so iterates stay inside the model's domain.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numdiff::numerical_jacobian;
use crate::scalar::{all_finite, inf_norm, real, Scalar};
use crate::system::EstimatingEquation;

/// Newton iteration controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<S: Scalar> {
    /// Maximum Newton steps before giving up (default 100).
    pub max_iterations: usize,
    /// Convergence threshold on the infinity norm of the weighted mean score
    /// (default 1e-10).
    pub residual_tolerance: S,
    /// Stop (unconverged) when an accepted step is smaller than this in
    /// infinity norm (default 1e-12).
    pub step_tolerance: S,
    /// Per-coordinate differentiation step factor; `None` means the cube
    /// root of machine epsilon. The step for coordinate `j` is
    /// `factor · max(1, |x_j|)`.
    pub jacobian_step: Option<S>,
    /// Multiplier applied to the step length each time the line search
    /// backtracks (default 0.5).
    pub line_search_shrink: S,
    /// Maximum backtracking shrinks per Newton step (default 30).
    pub max_step_halvings: usize,
}

impl<S: Scalar> Default for SolverConfig<S> {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            residual_tolerance: real(1e-10),
            step_tolerance: real(1e-12),
            jacobian_step: None,
            line_search_shrink: real(0.5),
            max_step_halvings: 30,
        }
    }
}

/// Result of a Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate<S: Scalar> {
    /// Best iterate found (the estimate when `converged` is true).
    pub value: DVector<S>,
    /// Infinity norm of the weighted mean score at `value`.
    pub residual_norm: S,
    /// Newton steps taken.
    pub iterations: usize,
    /// Whether `residual_norm ≤ residual_tolerance` was reached.
    pub converged: bool,
}

impl<S: Scalar> ParamEstimate<S> {
    /// Error if the fit did not converge, otherwise the estimate itself.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                residual: crate::scalar::to_f64(self.residual_norm),
                iterations: self.iterations,
            })
        }
    }
}

/// Solves `Σᵢ weightsᵢ · ψ(rowᵢ, x) = 0` for `x` by damped Newton iteration.
///
/// `weights` must be nonnegative with at least `dim_param` positive entries.
/// `init` overrides the equation's warm start (which itself defaults to the
/// zero vector). Reaching the iteration cap is not an error: the best
/// iterate is returned with `converged == false`. A singular iteration
/// matrix is an error.
pub fn solve_weighted<S: Scalar>(
    eq: &dyn EstimatingEquation<S>,
    data: &Dataset<S>,
    weights: &[S],
    init: Option<&DVector<S>>,
    config: &SolverConfig<S>,
) -> Result<ParamEstimate<S>> {
    let dim = eq.dim_param();
    if eq.dim_out() != dim {
        return Err(Error::InvalidArgument(format!(
            "newton solve needs a square system, got {} outputs for {} parameters",
            eq.dim_out(),
            dim
        )));
    }
    let n = data.n_rows();
    if weights.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {n} observations",
            weights.len()
        )));
    }
    let mut weight_sum = S::zero();
    let mut positive = 0usize;
    for &w in weights {
        if !w.is_finite() || w < S::zero() {
            return Err(Error::InvalidArgument(format!(
                "weights must be finite and nonnegative, got {w}"
            )));
        }
        if w > S::zero() {
            positive += 1;
            weight_sum += w;
        }
    }
    if positive < dim {
        return Err(Error::InsufficientData {
            needed: dim,
            got: positive,
            context: "weighted estimating-equation solve".into(),
        });
    }

    let mut x = match init {
        Some(v) => v.clone(),
        None => eq
            .warm_start_for(data, weights)
            .or_else(|| eq.warm_start())
            .unwrap_or_else(|| DVector::zeros(dim)),
    };
    if x.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "initial point has length {}, expected {dim}",
            x.len()
        )));
    }
    if !all_finite(&x) {
        return Err(Error::NonFiniteEvaluation {
            context: "initial parameter".into(),
        });
    }

    let mean_score = |point: &DVector<S>| -> Result<DVector<S>> {
        let mut acc = DVector::zeros(dim);
        for (i, &w) in weights.iter().enumerate() {
            if w > S::zero() {
                let score = eq.evaluate(data.row(i), point);
                if score.len() != dim {
                    return Err(Error::InvalidArgument(format!(
                        "score has length {}, expected {dim}",
                        score.len()
                    )));
                }
                acc.axpy(w, &score, S::one());
            }
        }
        acc /= weight_sum;
        if !all_finite(&acc) {
            return Err(Error::NonFiniteEvaluation {
                context: "weighted mean score".into(),
            });
        }
        Ok(acc)
    };

    let mut g = mean_score(&x)?;
    let mut g_norm = inf_norm(&g);
    let mut best = ParamEstimate {
        value: x.clone(),
        residual_norm: g_norm,
        iterations: 0,
        converged: g_norm <= config.residual_tolerance,
    };
    if best.converged {
        return Ok(best);
    }

    for iteration in 1..=config.max_iterations {
        let jac = mean_jacobian(eq, data, weights, weight_sum, &x, config)?;
        let step = jac.lu().solve(&(-&g)).ok_or_else(|| Error::SingularJacobian {
            context: "newton iteration".into(),
        })?;

        // Backtracking line search on the residual norm.
        let mut scale = S::one();
        let mut accepted: Option<(DVector<S>, DVector<S>, S)> = None;
        for _ in 0..=config.max_step_halvings {
            let trial = &x + &step * scale;
            if all_finite(&trial) {
                if let Ok(trial_g) = mean_score(&trial) {
                    let trial_norm = inf_norm(&trial_g);
                    if trial_norm < g_norm {
                        accepted = Some((trial, trial_g, trial_norm));
                        break;
                    }
                }
            }
            scale *= config.line_search_shrink;
        }

        let Some((next_x, next_g, next_norm)) = accepted else {
            // Stalled: no shrink of the residual along the Newton direction.
            best.iterations = iteration;
            return Ok(best);
        };

        let step_size = inf_norm(&(&next_x - &x));
        x = next_x;
        g = next_g;
        g_norm = next_norm;
        if g_norm < best.residual_norm {
            best = ParamEstimate {
                value: x.clone(),
                residual_norm: g_norm,
                iterations: iteration,
                converged: false,
            };
        }
        if g_norm <= config.residual_tolerance {
            best.converged = true;
            best.iterations = iteration;
            return Ok(best);
        }
        if step_size <= config.step_tolerance {
            best.iterations = iteration;
            return Ok(best);
        }
    }
    best.iterations = config.max_iterations;
    Ok(best)
}

/// Weighted average Jacobian `n⁻¹ Σᵢ weightsᵢ · Jᵢ(at)`, where `Jᵢ` is the
/// Jacobian of the score at observation `i` and `n` is the total row count
/// (zero-weight rows still count toward `n`).
///
/// With an analytic Jacobian the rows are accumulated directly; otherwise
/// the *aggregated* weighted mean score is differentiated once by central
/// differences, which equals the row-by-row average because differentiation
/// is linear and the probe steps depend only on `at`.
pub fn average_jacobian<S: Scalar>(
    eq: &dyn EstimatingEquation<S>,
    data: &Dataset<S>,
    weights: &[S],
    at: &DVector<S>,
    config: &SolverConfig<S>,
) -> Result<DMatrix<S>> {
    let n = data.n_rows();
    if weights.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {n} observations",
            weights.len()
        )));
    }
    if n == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            got: 0,
            context: "average jacobian".into(),
        });
    }
    let inv_n = real::<S>(n as f64).recip();
    if eq.has_analytic_jacobian() {
        let mut acc = DMatrix::zeros(eq.dim_out(), eq.dim_param());
        for (i, &w) in weights.iter().enumerate() {
            if w > S::zero() {
                let jac = eq
                    .analytic_jacobian(data.row(i), at)
                    .expect("has_analytic_jacobian promised Some");
                acc += jac * w;
            }
        }
        acc *= inv_n;
        if !acc.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteEvaluation {
                context: "average jacobian".into(),
            });
        }
        Ok(acc)
    } else {
        let mean = |point: &DVector<S>| -> Result<DVector<S>> {
            let mut acc = DVector::zeros(eq.dim_out());
            for (i, &w) in weights.iter().enumerate() {
                if w > S::zero() {
                    acc.axpy(w, &eq.evaluate(data.row(i), point), S::one());
                }
            }
            Ok(acc * inv_n)
        };
        numerical_jacobian(mean, at, eq.dim_out(), config.jacobian_step)
    }
}

/// Same contract as [`average_jacobian`], but normalized by the weight sum
/// instead of the row count: the iteration matrix of the Newton solver.
fn mean_jacobian<S: Scalar>(
    eq: &dyn EstimatingEquation<S>,
    data: &Dataset<S>,
    weights: &[S],
    weight_sum: S,
    at: &DVector<S>,
    config: &SolverConfig<S>,
) -> Result<DMatrix<S>> {
    let n = data.n_rows();
    let rescale = real::<S>(n as f64) / weight_sum;
    Ok(average_jacobian(eq, data, weights, at, config)? * rescale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::EstimatingFunction;

    fn mean_model() -> EstimatingFunction<f64> {
        EstimatingFunction::new(1, |row: &[f64], th: &DVector<f64>| {
            DVector::from_vec(vec![row[0] - th[0]])
        })
        .with_jacobian(|_, _| DMatrix::from_vec(1, 1, vec![-1.0]))
    }

    fn w_data(values: &[f64]) -> Dataset<f64> {
        Dataset::from_columns(vec![("w".into(), values.to_vec())]).unwrap()
    }

    #[test]
    fn mean_model_converges_in_one_newton_step() {
        // Ψ(w, θ) = w − θ with data {1, 2, 3}: the root is the mean, 2, and
        // the affine score makes Newton land on it in a single step.
        let data = w_data(&[1.0, 2.0, 3.0]);
        let est = solve_weighted(
            &mean_model(),
            &data,
            &[1.0, 1.0, 1.0],
            None,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(est.converged);
        assert_eq!(est.iterations, 1);
        assert!((est.value[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weights_select_the_subsample() {
        let data = w_data(&[1.0, 2.0, 10.0, 20.0]);
        let est = solve_weighted(
            &mean_model(),
            &data,
            &[1.0, 1.0, 0.0, 0.0],
            None,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!((est.value[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn weight_rescaling_changes_nothing() {
        let data = w_data(&[0.5, 4.0, -2.0, 9.0]);
        let weights: Vec<f64> = vec![1.0, 1.0, 1.0, 0.0];
        let scaled: Vec<f64> = weights.iter().map(|w| w * 3.7).collect();
        let a = solve_weighted(&mean_model(), &data, &weights, None, &SolverConfig::default())
            .unwrap();
        let b = solve_weighted(&mean_model(), &data, &scaled, None, &SolverConfig::default())
            .unwrap();
        // Exact invariance in real arithmetic; rounding in Σwψ/Σw leaves a
        // few ulps of slack.
        assert!((a.value[0] - b.value[0]).abs() < 1e-13, "{} vs {}", a.value[0], b.value[0]);
        assert_eq!(a.converged, b.converged);
    }

    #[test]
    fn too_few_positive_weights_is_insufficient_data() {
        let data = w_data(&[1.0, 2.0]);
        let err = solve_weighted(
            &mean_model(),
            &data,
            &[0.0, 0.0],
            None,
            &SolverConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientData { .. }), "{err}");
    }

    #[test]
    fn flat_score_is_reported_singular() {
        // Ψ ≡ constant has a zero Jacobian: Newton must fail loudly, not
        // silently claim convergence.
        let flat = EstimatingFunction::new(1, |_: &[f64], _: &DVector<f64>| {
            DVector::from_vec(vec![1.0])
        });
        let data = w_data(&[1.0, 2.0]);
        let err = solve_weighted(&flat, &data, &[1.0, 1.0], None, &SolverConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::SingularJacobian { .. }), "{err}");
    }

    #[test]
    fn iteration_cap_returns_best_iterate_unconverged() {
        // A score with no root: Ψ(w, θ) = exp(θ) stays positive, so the
        // solver walks θ downhill forever and must stop honestly.
        let no_root = EstimatingFunction::new(1, |_: &[f64], th: &DVector<f64>| {
            DVector::from_vec(vec![th[0].exp()])
        });
        let data = w_data(&[0.0]);
        let config = SolverConfig {
            max_iterations: 5,
            ..SolverConfig::default()
        };
        let est = solve_weighted(&no_root, &data, &[1.0], None, &config).unwrap();
        assert!(!est.converged);
        assert!(est.residual_norm > 0.0);
        assert!(est.iterations <= 5);
    }

    #[test]
    fn converged_implies_residual_below_tolerance() {
        let data = w_data(&[3.0, 5.0, 7.0, 11.0]);
        let config = SolverConfig::default();
        let est = solve_weighted(&mean_model(), &data, &[1.0; 4], None, &config).unwrap();
        assert!(est.converged);
        assert!(est.residual_norm <= config.residual_tolerance);
    }

    #[test]
    fn average_jacobian_of_mean_model_is_minus_one() {
        let data = w_data(&[1.0, 2.0, 3.0]);
        let jac = average_jacobian(
            &mean_model(),
            &data,
            &[1.0, 1.0, 1.0],
            &DVector::from_vec(vec![0.0]),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(jac[(0, 0)], -1.0);
    }

    #[test]
    fn average_jacobian_counts_zero_weight_rows_in_the_denominator() {
        // Weights (1, 1, 0, 0): the average runs over the δ = 1 rows but is
        // divided by the full row count n = 4.
        let data = w_data(&[1.0, 2.0, 3.0, 4.0]);
        let jac = average_jacobian(
            &mean_model(),
            &data,
            &[1.0, 1.0, 0.0, 0.0],
            &DVector::from_vec(vec![0.0]),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!((jac[(0, 0)] - (-0.5)).abs() < 1e-14);
    }

    #[test]
    fn numerical_and_analytic_average_jacobians_agree() {
        // Same score with and without the declared Jacobian: the numerical
        // path differentiates the aggregated mean and must agree closely.
        let with = mean_model();
        let without = EstimatingFunction::new(1, |row: &[f64], th: &DVector<f64>| {
            DVector::from_vec(vec![row[0] - th[0]])
        });
        let data = w_data(&[1.0, 2.0, 3.0, 4.0]);
        let at = DVector::from_vec(vec![0.7]);
        let weights = [0.0, 1.0, 2.0, 1.0];
        let cfg = SolverConfig::default();
        let a = average_jacobian(&with, &data, &weights, &at, &cfg).unwrap();
        let b = average_jacobian(&without, &data, &weights, &at, &cfg).unwrap();
        assert!((a[(0, 0)] - b[(0, 0)]).abs() < 1e-9);
    }

    #[test]
    fn f32_instantiation_solves_with_loosened_tolerance() {
        let data: Dataset<f32> =
            Dataset::from_columns(vec![("w".into(), vec![1.0f32, 2.0, 3.0])]).unwrap();
        let eq = EstimatingFunction::<f32>::new(1, |row: &[f32], th: &DVector<f32>| {
            DVector::from_vec(vec![row[0] - th[0]])
        });
        let config = SolverConfig::<f32> {
            residual_tolerance: 1e-5,
            step_tolerance: 1e-6,
            ..SolverConfig::default()
        };
        let est = solve_weighted(&eq, &data, &[1.0, 1.0, 1.0], None, &config).unwrap();
        assert!(est.converged);
        assert!((est.value[0] - 2.0).abs() < 1e-4);
    }
}
