//! Linear index pair: stage 1 regresses `W` on covariates, stage 2 regresses
//! `Y` on the fitted single index `x' theta`.
//!
//! Rows are laid out as `[W, Y, x1, ..., xd]`. Stage 1 solves the normal
//! equations `x (W - x' theta) = 0`; stage 2 treats `f = x' theta` as a
//! plug-in regressor and solves `f (Y - beta f) = 0` for the scalar slope.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::system::{EstimatingFunction, PluginTransform, SecondStage, TwoStageSystem};

/// Generating law for the linear pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPairSpec {
    /// Stage-1 coefficient vector; its length fixes the covariate count.
    pub theta: Vec<f64>,
    /// Stage-2 slope on the single index.
    pub beta0: f64,
    /// Variance of the additive noise in each stage.
    pub noise_variance: f64,
}

impl Default for LinearPairSpec {
    fn default() -> Self {
        let unit = 1.0 / 3.0f64.sqrt();
        Self {
            theta: vec![unit; 3],
            beta0: unit,
            noise_variance: 0.5,
        }
    }
}

fn covariates(row: &[f64], dim: usize) -> DVector<f64> {
    DVector::from_column_slice(&row[2..2 + dim])
}

/// Builds the linear two-stage system for `spec.theta.len()` covariates.
///
/// Both stages carry analytic Jacobians, and the stage-2 plug-in dependence
/// is expressed through the scalar index transform, so the chain-rule path
/// is exercised end to end.
pub fn make_linear_pair(spec: &LinearPairSpec) -> TwoStageSystem<f64> {
    let dim = spec.theta.len();

    let first = EstimatingFunction::new(dim, move |row: &[f64], theta: &DVector<f64>| {
        let x = covariates(row, dim);
        let residual = row[0] - x.dot(theta);
        x * residual
    })
    .with_jacobian(move |row: &[f64], _theta: &DVector<f64>| {
        let x = covariates(row, dim);
        -(&x * x.transpose())
    });

    let transform = PluginTransform::new(
        move |row: &[f64], theta: &DVector<f64>| covariates(row, dim).dot(theta),
        move |row: &[f64], _theta: &DVector<f64>| covariates(row, dim),
        |row: &[f64], index: f64, beta: &DVector<f64>| {
            DVector::from_element(1, row[1] - 2.0 * beta[0] * index)
        },
    );

    let second = SecondStage::new(
        1,
        move |row: &[f64], beta: &DVector<f64>, theta: &DVector<f64>| {
            let index = covariates(row, dim).dot(theta);
            DVector::from_element(1, index * (row[1] - beta[0] * index))
        },
    )
    .with_param_jacobian(move |row: &[f64], _beta: &DVector<f64>, theta: &DVector<f64>| {
        let index = covariates(row, dim).dot(theta);
        DMatrix::from_element(1, 1, -index * index)
    })
    .with_transform(transform);

    TwoStageSystem::new(first, second)
}

/// Draws `[W, Y, x1, ..., xd]` rows with standard normal covariates,
/// `W = x' theta + e1` and `Y = beta0 (x' theta) + e2`, where `e1` and `e2`
/// are independent normals with variance `spec.noise_variance`.
pub fn simulate_linear(spec: &LinearPairSpec, n: usize, seed: u64) -> Result<Dataset<f64>> {
    let dim = spec.theta.len();
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "linear pair needs at least one covariate".into(),
        ));
    }
    let noise = Normal::new(0.0, spec.noise_variance.sqrt())
        .map_err(|e| Error::Domain(format!("noise variance: {e}")))?;
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
        columns[0].1.push(index + noise.sample(&mut rng));
        columns[1]
            .1
            .push(spec.beta0 * index + noise.sample(&mut rng));
    }
    Dataset::from_columns(columns)
}
