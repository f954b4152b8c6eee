//! Logistic pair: stage 1 is a logistic regression of `W` on covariates,
//! stage 2 a logistic regression of `Y` on a curved function of the fitted
//! index, so the plug-in enters through a genuinely nonlinear transform.
//!
//! Rows are laid out as `[W, Y, x1, ..., xd]` with binary `W` and `Y`.
//! Stage 1 solves the score equation `x (W - H(x' theta)) = 0`. Stage 2
//! builds the regressor `f = 2 + 1.5 (x' theta)^2` and solves
//! `f (Y - H(beta f)) = 0` for the scalar slope.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{expit, expit_prime};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::system::{EstimatingFunction, PluginTransform, SecondStage, TwoStageSystem};

/// Generating law for the logistic pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticPairSpec {
    /// Stage-1 coefficient vector; its length fixes the covariate count.
    pub theta: Vec<f64>,
    /// Stage-2 slope on the transformed index.
    pub beta0: f64,
}

impl Default for LogisticPairSpec {
    fn default() -> Self {
        let unit = 1.0 / 3.0f64.sqrt();
        Self {
            theta: vec![unit; 3],
            beta0: unit,
        }
    }
}

fn covariates(row: &[f64], dim: usize) -> DVector<f64> {
    DVector::from_column_slice(&row[2..2 + dim])
}

/// Curved stage-2 regressor built from the stage-1 index.
fn curved_index(index: f64) -> f64 {
    2.0 + 1.5 * index * index
}

/// Builds the logistic two-stage system for `spec.theta.len()` covariates.
pub fn make_logistic_pair(spec: &LogisticPairSpec) -> TwoStageSystem<f64> {
    let dim = spec.theta.len();

    let first = EstimatingFunction::new(dim, move |row: &[f64], theta: &DVector<f64>| {
        let x = covariates(row, dim);
        let residual = row[0] - expit(x.dot(theta));
        x * residual
    })
    .with_jacobian(move |row: &[f64], theta: &DVector<f64>| {
        let x = covariates(row, dim);
        let slope = expit_prime(x.dot(theta));
        (&x * x.transpose()) * (-slope)
    });

    let transform = PluginTransform::new(
        move |row: &[f64], theta: &DVector<f64>| curved_index(covariates(row, dim).dot(theta)),
        move |row: &[f64], theta: &DVector<f64>| {
            let x = covariates(row, dim);
            let index = x.dot(theta);
            x * (3.0 * index)
        },
        |row: &[f64], f: f64, beta: &DVector<f64>| {
            let eta = beta[0] * f;
            DVector::from_element(1, row[1] - expit(eta) - f * beta[0] * expit_prime(eta))
        },
    );

    let second = SecondStage::new(
        1,
        move |row: &[f64], beta: &DVector<f64>, theta: &DVector<f64>| {
            let f = curved_index(covariates(row, dim).dot(theta));
            DVector::from_element(1, f * (row[1] - expit(beta[0] * f)))
        },
    )
    .with_param_jacobian(move |row: &[f64], beta: &DVector<f64>, theta: &DVector<f64>| {
        let f = curved_index(covariates(row, dim).dot(theta));
        DMatrix::from_element(1, 1, -f * f * expit_prime(beta[0] * f))
    })
    .with_transform(transform);

    TwoStageSystem::new(first, second)
}

/// Draws `[W, Y, x1, ..., xd]` rows with standard normal covariates,
/// `W ~ Bernoulli(H(x' theta))` and `Y ~ Bernoulli(H(beta0 f))` where
/// `f = 2 + 1.5 (x' theta)^2`.
pub fn simulate_logistic(spec: &LogisticPairSpec, n: usize, seed: u64) -> Result<Dataset<f64>> {
    let dim = spec.theta.len();
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "logistic pair needs at least one covariate".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut columns: Vec<(String, Vec<f64>)> = Vec::with_capacity(2 + dim);
    columns.push(("W".into(), Vec::with_capacity(n)));
    columns.push(("Y".into(), Vec::with_capacity(n)));
    for j in 0..dim {
        columns.push((format!("x{}", j + 1), Vec::with_capacity(n)));
    }

    for _ in 0..n {
        let mut index = 0.0;
        for j in 0..dim {
            let x: f64 = StandardNormal.sample(&mut rng);
            index += spec.theta[j] * x;
            columns[2 + j].1.push(x);
        }
        let w = rng.random_bool(expit(index));
        let y = rng.random_bool(expit(spec.beta0 * curved_index(index)));
        columns[0].1.push(if w { 1.0 } else { 0.0 });
        columns[1].1.push(if y { 1.0 } else { 0.0 });
    }
    Dataset::from_columns(columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::{solve_weighted, SolverConfig};
    use crate::system::{check_jacobian, check_second_stage};

    #[test]
    fn analytic_derivatives_match_central_differences() {
        let data = simulate_logistic(&LogisticPairSpec::default(), 50, 3).unwrap();
        let system = make_logistic_pair(&LogisticPairSpec::default());
        let center = DVector::from_element(3, 0.3);
        let gap = check_jacobian(&system.first, &data, &center, 0.4, 25, 21).unwrap();
        assert!(gap < 1e-7, "stage-1 jacobian gap {gap}");
        let beta_center = DVector::from_element(1, 0.4);
        let gap2 =
            check_second_stage(&system.second, &data, &beta_center, &center, 0.3, 25, 22).unwrap();
        assert!(gap2 < 1e-6, "stage-2 jacobian gap {gap2}");
    }

    #[test]
    fn binary_columns_and_curved_regressor_floor() {
        let data = simulate_logistic(&LogisticPairSpec::default(), 200, 9).unwrap();
        for i in 0..data.n_rows() {
            let row = data.row(i);
            assert!(row[0] == 0.0 || row[0] == 1.0);
            assert!(row[1] == 0.0 || row[1] == 1.0);
        }
        // The curved regressor never drops below its value at index zero.
        assert!(curved_index(0.0) == 2.0);
        assert!(curved_index(-1.7) > 2.0);
    }

    #[test]
    fn large_sample_estimates_approach_the_truth() {
        let spec = LogisticPairSpec::default();
        let data = simulate_logistic(&spec, 60_000, 31).unwrap();
        let system = make_logistic_pair(&spec);
        let ones = vec![1.0; data.n_rows()];
        let config = SolverConfig::default();
        let theta = solve_weighted(&system.first, &data, &ones, None, &config)
            .unwrap()
            .require_converged()
            .unwrap();
        for j in 0..3 {
            assert!(
                (theta.value[j] - spec.theta[j]).abs() < 0.05,
                "theta[{j}] = {}",
                theta.value[j]
            );
        }
        let plugged = system.second.at(&theta.value);
        let beta = solve_weighted(&plugged, &data, &ones, None, &config)
            .unwrap()
            .require_converged()
            .unwrap();
        assert!(
            (beta.value[0] - spec.beta0).abs() < 0.05,
            "beta = {}",
            beta.value[0]
        );
    }

    #[test]
    fn simulation_is_reproducible_and_seed_sensitive() {
        let spec = LogisticPairSpec::default();
        assert_eq!(
            simulate_logistic(&spec, 30, 1).unwrap(),
            simulate_logistic(&spec, 30, 1).unwrap()
        );
        assert_ne!(
            simulate_logistic(&spec, 30, 1).unwrap(),
            simulate_logistic(&spec, 30, 2).unwrap()
        );
    }
}
