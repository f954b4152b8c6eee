//! Scalar location pair, the smallest complete two-stage system.
//!
//! Stage 1 estimates the mean of `W`; stage 2 estimates how far `Y` sits
//! above that mean. Rows are laid out as `[W, Y]`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::system::{EstimatingFunction, SecondStage, TwoStageSystem};

/// Generating law for the scalar location pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanPairSpec {
    /// Mean of `W`.
    pub theta: f64,
    /// Gap between the mean of `Y` and the mean of `W`.
    pub beta: f64,
    /// Standard deviation of the additive noise on both variables.
    pub noise_sd: f64,
}

impl Default for MeanPairSpec {
    fn default() -> Self {
        Self {
            theta: 1.0,
            beta: 2.0,
            noise_sd: 1.0,
        }
    }
}

/// Two-stage system with stage-1 equation `W - theta` and stage-2 equation
/// `Y - beta - theta`.
///
/// Both equations are affine with unit-magnitude slopes, so every estimate
/// and influence quantity has a closed form; the pair anchors hand-checked
/// tests throughout the crate.
pub fn mean_pair() -> TwoStageSystem<f64> {
    let first = EstimatingFunction::new(1, |row: &[f64], theta: &DVector<f64>| {
        DVector::from_element(1, row[0] - theta[0])
    })
    .with_jacobian(|_row: &[f64], _theta: &DVector<f64>| DMatrix::from_element(1, 1, -1.0));

    let second = SecondStage::new(
        1,
        |row: &[f64], beta: &DVector<f64>, theta: &DVector<f64>| {
            DVector::from_element(1, row[1] - beta[0] - theta[0])
        },
    )
    .with_param_jacobian(|_row: &[f64], _beta: &DVector<f64>, _theta: &DVector<f64>| {
        DMatrix::from_element(1, 1, -1.0)
    })
    .with_plugin_jacobian(|_row: &[f64], _beta: &DVector<f64>, _theta: &DVector<f64>| {
        DMatrix::from_element(1, 1, -1.0)
    });

    TwoStageSystem::new(first, second)
}

/// Draws `[W, Y]` rows with `W = theta + noise`, `Y = theta + beta + noise`,
/// both noise terms independent normals.
pub fn simulate_mean(spec: &MeanPairSpec, n: usize, seed: u64) -> Result<Dataset<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sd)
        .map_err(|e| crate::error::Error::Domain(format!("noise standard deviation: {e}")))?;
    let mut w = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        w.push(spec.theta + noise.sample(&mut rng));
        y.push(spec.theta + spec.beta + noise.sample(&mut rng));
    }
    Dataset::from_columns(vec![("W".into(), w), ("Y".into(), y)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::{solve_weighted, SolverConfig};
    use approx::assert_relative_eq;

    #[test]
    fn fitted_values_are_the_sample_means() {
        let data = Dataset::from_columns(vec![
            ("W".into(), vec![1.0, 2.0, 3.0, 4.0]),
            ("Y".into(), vec![5.0, 6.0, 7.0, 8.0]),
        ])
        .unwrap();
        let system = mean_pair();
        let config = SolverConfig::default();
        let ones = vec![1.0; 4];
        let theta = solve_weighted(&system.first, &data, &ones, None, &config).unwrap();
        assert_relative_eq!(theta.value[0], 2.5, epsilon = 1e-12);
        let plugged = system.second.at(&theta.value);
        let beta = solve_weighted(&plugged, &data, &ones, None, &config).unwrap();
        // mean(Y) - mean(W) = 6.5 - 2.5
        assert_relative_eq!(beta.value[0], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn simulated_means_approach_the_truth() {
        let spec = MeanPairSpec::default();
        let data = simulate_mean(&spec, 40_000, 7).unwrap();
        let mean = |c: Vec<f64>| c.iter().sum::<f64>() / c.len() as f64;
        let w_bar = mean(data.column(0));
        let y_bar = mean(data.column(1));
        // Monte Carlo error at n = 40_000 with unit noise is about 0.005.
        assert!((w_bar - spec.theta).abs() < 0.02, "w_bar = {w_bar}");
        assert!(
            (y_bar - spec.theta - spec.beta).abs() < 0.02,
            "y_bar = {y_bar}"
        );
    }

    #[test]
    fn simulation_is_reproducible() {
        let a = simulate_mean(&MeanPairSpec::default(), 50, 123).unwrap();
        let b = simulate_mean(&MeanPairSpec::default(), 50, 123).unwrap();
        assert_eq!(a, b);
        let c = simulate_mean(&MeanPairSpec::default(), 50, 124).unwrap();
        assert_ne!(a, c);
    }
}
