//! Full-sample "stacked" estimation: both stages solved on all rows.
//!
//! The stacked estimator solves the first stage on the full sample, plugs
//! the estimate into the second stage, and solves that on the full sample
//! too. Its influence rows come from the block-triangular Jacobian of the
//! stacked score,
//!
//! ```text
//! Φ = [ Φ₁₁   0  ]        Φ₁₁ = n⁻¹ Σ ∂Ψᵢ/∂θᵀ
//!     [ Φ₂₁  Φ₂₂ ]        Φ₂₁ = n⁻¹ Σ ∂𝒦ᵢ/∂θᵀ,  Φ₂₂ = n⁻¹ Σ ∂𝒦ᵢ/∂βᵀ
//! ```
//!
//! whose inverse is `[[Φ₁₁⁻¹, 0], [−Φ₂₂⁻¹Φ₂₁Φ₁₁⁻¹, Φ₂₂⁻¹]]`, giving row
//! `−Φ⁻¹ (Ψᵢ; 𝒦ᵢ)` for observation `i`. At π = 1/2 the split and stacked
//! estimators agree to first order, which [`equivalence_gap`] quantifies.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::solve::{average_jacobian, solve_weighted, ParamEstimate, SolverConfig};
use crate::split::{
    plugin_average_jacobian, sandwich_covariance, SandwichCovariance, SplitInference,
};
use crate::system::{EstimatingEquation, TwoStageSystem};

/// Full-sample two-stage fit with its score Jacobian blocks and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFit<S: Scalar> {
    /// First-stage solve on all rows (converged).
    pub first: ParamEstimate<S>,
    /// Second-stage solve on all rows with the first stage plugged in.
    pub second: ParamEstimate<S>,
    /// `n⁻¹ Σ ∂Ψᵢ/∂θᵀ` at the fit.
    pub phi11: DMatrix<S>,
    /// `n⁻¹ Σ ∂𝒦ᵢ/∂θᵀ` at the fit.
    pub phi21: DMatrix<S>,
    /// `n⁻¹ Σ ∂𝒦ᵢ/∂βᵀ` at the fit.
    pub phi22: DMatrix<S>,
    /// Covariance of the combined (θ̂, β̂) vector.
    pub covariance: SandwichCovariance<S>,
}

impl<S: Scalar> StackedFit<S> {
    /// First-stage estimate.
    pub fn theta(&self) -> &DVector<S> {
        &self.first.value
    }

    /// Second-stage estimate.
    pub fn beta(&self) -> &DVector<S> {
        &self.second.value
    }

    /// Combined (θ̂, β̂) vector in block order.
    pub fn combined(&self) -> DVector<S> {
        let p = self.first.value.len();
        let q = self.second.value.len();
        let mut out = DVector::zeros(p + q);
        out.rows_mut(0, p).copy_from(&self.first.value);
        out.rows_mut(p, q).copy_from(&self.second.value);
        out
    }
}

/// Fits both stages on the full sample and assembles the stacked influence
/// rows and sandwich covariance.
///
/// The stages stay sequential — the second solve holds the first estimate
/// fixed — exactly as in the split pipeline, just without held-out rows.
pub fn fit_stacked<S: Scalar>(
    system: &TwoStageSystem<S>,
    data: &Dataset<S>,
    config: &SolverConfig<S>,
) -> Result<StackedFit<S>> {
    let n = data.n_rows();
    let p = system.dim_first();
    let q = system.dim_second();
    if n <= p + q {
        return Err(Error::InsufficientData {
            needed: p + q + 1,
            got: n,
            context: "stacked two-stage fit".into(),
        });
    }
    let ones = vec![S::one(); n];

    let first = solve_weighted(&system.first, data, &ones, None, config)
        .and_then(ParamEstimate::require_converged)
        .map_err(|e| e.in_stage(1))?;
    let plugged = system.second.at(&first.value);
    let second = solve_weighted(&plugged, data, &ones, None, config)
        .and_then(ParamEstimate::require_converged)
        .map_err(|e| e.in_stage(2))?;

    let phi11 = average_jacobian(&system.first, data, &ones, &first.value, config)?;
    let phi22 = average_jacobian(
        &system.second.at(&first.value),
        data,
        &ones,
        &second.value,
        config,
    )?;
    let phi21 =
        plugin_average_jacobian(system, data, &ones, &first.value, &second.value, config)?;

    let phi11_inv = phi11.clone().try_inverse().ok_or_else(|| Error::SingularJacobian {
        context: "stacked first-stage block".into(),
    })?;
    let phi22_inv = phi22.clone().try_inverse().ok_or_else(|| Error::SingularJacobian {
        context: "stacked second-stage block".into(),
    })?;
    let cross = &phi22_inv * &phi21 * &phi11_inv;

    let mut rows = DMatrix::zeros(n, p + q);
    for i in 0..n {
        let row = data.row(i);
        let psi = system.first.evaluate(row, &first.value);
        let kappa = system.second.evaluate(row, &second.value, &first.value);
        let theta_block = -(&phi11_inv * &psi);
        let beta_block = &cross * &psi - &phi22_inv * &kappa;
        for j in 0..p {
            rows[(i, j)] = theta_block[j];
        }
        for j in 0..q {
            rows[(i, p + j)] = beta_block[j];
        }
    }
    let covariance = sandwich_covariance(rows)?;

    Ok(StackedFit {
        first,
        second,
        phi11,
        phi21,
        phi22,
        covariance,
    })
}

/// Adapter exposing a [`TwoStageSystem`] as one square estimating equation
/// on the concatenated parameter (θ, β).
///
/// Solving this jointly must agree with the sequential fit because the score
/// Jacobian is block triangular: the θ block never hears about β. Useful as
/// a consistency check and for examining the stacked score directly.
pub struct JointSystem<'a, S: Scalar> {
    system: &'a TwoStageSystem<S>,
}

impl<'a, S: Scalar> JointSystem<'a, S> {
    /// Wraps a system without copying it.
    pub fn new(system: &'a TwoStageSystem<S>) -> Self {
        Self { system }
    }

    fn split_param(&self, param: &DVector<S>) -> (DVector<S>, DVector<S>) {
        let p = self.system.dim_first();
        let q = self.system.dim_second();
        (
            DVector::from_fn(p, |i, _| param[i]),
            DVector::from_fn(q, |i, _| param[p + i]),
        )
    }
}

impl<S: Scalar> EstimatingEquation<S> for JointSystem<'_, S> {
    fn dim_param(&self) -> usize {
        self.system.dim_total()
    }

    fn dim_out(&self) -> usize {
        self.system.dim_total()
    }

    fn evaluate(&self, row: &[S], param: &DVector<S>) -> DVector<S> {
        let (theta, beta) = self.split_param(param);
        let psi = self.system.first.evaluate(row, &theta);
        let kappa = self.system.second.evaluate(row, &beta, &theta);
        let p = psi.len();
        let mut out = DVector::zeros(p + kappa.len());
        out.rows_mut(0, p).copy_from(&psi);
        out.rows_mut(p, kappa.len()).copy_from(&kappa);
        out
    }

    fn analytic_jacobian(&self, row: &[S], param: &DVector<S>) -> Option<DMatrix<S>> {
        if !self.has_analytic_jacobian() {
            return None;
        }
        let (theta, beta) = self.split_param(param);
        let p = self.system.dim_first();
        let q = self.system.dim_second();
        let top = self.system.first.analytic_jacobian(row, &theta)?;
        let bottom_beta = self
            .system
            .second
            .analytic_param_jacobian(row, &beta, &theta)?;
        let bottom_theta = self
            .system
            .second
            .plugin_jacobian(row, &beta, &theta, None)
            .ok()?;
        let mut jac = DMatrix::zeros(p + q, p + q);
        jac.view_mut((0, 0), (p, p)).copy_from(&top);
        jac.view_mut((p, 0), (q, p)).copy_from(&bottom_theta);
        jac.view_mut((p, p), (q, q)).copy_from(&bottom_beta);
        jac
            .iter()
            .all(|v| v.is_finite())
            .then_some(jac)
    }

    fn has_analytic_jacobian(&self) -> bool {
        self.system.first.has_analytic_jacobian()
            && self.system.second.has_analytic_param_jacobian()
            && self.system.second.has_analytic_plugin_jacobian()
    }

    fn warm_start(&self) -> Option<DVector<S>> {
        let p = self.system.dim_first();
        let q = self.system.dim_second();
        let first = self.system.first.warm_start();
        let second = self.system.second.warm_start();
        if first.is_none() && second.is_none() {
            return None;
        }
        let mut out = DVector::zeros(p + q);
        if let Some(v) = first {
            out.rows_mut(0, p).copy_from(&v);
        }
        if let Some(v) = second {
            out.rows_mut(p, q).copy_from(&v);
        }
        Some(out)
    }
}

/// How far a split fit sits from the stacked fit on the same data.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport<S: Scalar> {
    /// ‖θ̄_split − θ̂_stacked‖₂.
    pub gap_theta: S,
    /// ‖β̄_split − β̂_stacked‖₂.
    pub gap_beta: S,
    /// `gap_beta` divided by the stacked standard error of β (root of the
    /// summed coordinate variances).
    pub gap_relative_to_se: S,
    /// Split columns that entered the averages.
    pub b_used: usize,
    /// Observations.
    pub n: usize,
    /// Stage-1 membership probability of the splits.
    pub pi: f64,
}

/// Measures the split-vs-stacked estimate gap on one dataset.
pub fn equivalence_gap<S: Scalar>(
    split: &SplitInference<S>,
    stacked: &StackedFit<S>,
    pi: f64,
) -> Result<EquivalenceReport<S>> {
    let p = stacked.first.value.len();
    let q = stacked.second.value.len();
    if split.fit.theta_bar.len() != p || split.fit.beta_bar.len() != q {
        return Err(Error::InvalidArgument(
            "split and stacked fits have different parameter dimensions".into(),
        ));
    }
    let gap_theta = (&split.fit.theta_bar - &stacked.first.value).norm();
    let gap_beta = (&split.fit.beta_bar - &stacked.second.value).norm();
    let mut beta_var_sum = S::zero();
    for j in 0..q {
        beta_var_sum += stacked.covariance.variance(p + j);
    }
    let se = beta_var_sum.sqrt();
    if !(se > S::zero()) {
        return Err(Error::InvalidArgument(
            "stacked β standard error is zero; relative gap undefined".into(),
        ));
    }
    Ok(EquivalenceReport {
        gap_theta,
        gap_beta,
        gap_relative_to_se: gap_beta / se,
        b_used: split.fit.b_used,
        n: stacked.covariance.n,
        pi,
    })
}
