//! Estimating-function abstractions.
//!
//! An estimating function maps one observation row and a parameter vector to
//! a score vector; a parameter estimate is a root of the summed (weighted)
//! scores. Two-stage systems pair a first-stage function Ψ(row, θ) with a
//! second-stage function 𝒦(row, β, θ) that is solved for β with the
//! first-stage estimate plugged in and held fixed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numdiff::numerical_jacobian;
use crate::scalar::{real, sabs, smax, Scalar};

type EvalFn<S> = Box<dyn Fn(&[S], &DVector<S>) -> DVector<S> + Send + Sync>;
type JacFn<S> = Box<dyn Fn(&[S], &DVector<S>) -> DMatrix<S> + Send + Sync>;
type StartFn<S> = Box<dyn Fn(&Dataset<S>, &[S]) -> Option<DVector<S>> + Send + Sync>;
type StageTwoEvalFn<S> = Box<dyn Fn(&[S], &DVector<S>, &DVector<S>) -> DVector<S> + Send + Sync>;
type StageTwoJacFn<S> = Box<dyn Fn(&[S], &DVector<S>, &DVector<S>) -> DMatrix<S> + Send + Sync>;
type TransformValueFn<S> = Box<dyn Fn(&[S], &DVector<S>) -> S + Send + Sync>;
type TransformGradFn<S> = Box<dyn Fn(&[S], &DVector<S>) -> DVector<S> + Send + Sync>;
type SensitivityFn<S> = Box<dyn Fn(&[S], S, &DVector<S>) -> DVector<S> + Send + Sync>;

/// Per-observation score function solvable for its parameter.
///
/// Implementors supply the score evaluation and, optionally, an analytic
/// Jacobian with respect to the parameter. When no analytic Jacobian is
/// available, callers fall back to central differences.
pub trait EstimatingEquation<S: Scalar>: Send + Sync {
    /// Length of the parameter vector.
    fn dim_param(&self) -> usize;

    /// Length of the score vector (equal to `dim_param` for square systems).
    fn dim_out(&self) -> usize;

    /// Score contribution of one observation at `param`.
    fn evaluate(&self, row: &[S], param: &DVector<S>) -> DVector<S>;

    /// Analytic `dim_out × dim_param` Jacobian of [`Self::evaluate`] with
    /// respect to `param`, if the implementor provides one.
    fn analytic_jacobian(&self, row: &[S], param: &DVector<S>) -> Option<DMatrix<S>>;

    /// Whether [`Self::analytic_jacobian`] returns `Some`.
    fn has_analytic_jacobian(&self) -> bool;

    /// Preferred starting point for Newton iteration; `None` means the zero
    /// vector.
    fn warm_start(&self) -> Option<DVector<S>> {
        None
    }

    /// Starting point tailored to the weighted subsample about to be solved;
    /// wins over [`Self::warm_start`] when it returns `Some`. Implementations
    /// must be deterministic in `(data, weights)` so that repeated solves and
    /// parallel schedules agree.
    fn warm_start_for(&self, _data: &Dataset<S>, _weights: &[S]) -> Option<DVector<S>> {
        None
    }
}

/// Estimating function assembled from closures.
pub struct EstimatingFunction<S: Scalar> {
    dim_param: usize,
    dim_out: usize,
    eval: EvalFn<S>,
    jac: Option<JacFn<S>>,
    warm_start: Option<DVector<S>>,
    start_fn: Option<StartFn<S>>,
}

impl<S: Scalar> EstimatingFunction<S> {
    /// Builds a square estimating function (`dim_out == dim_param`).
    pub fn new(
        dim_param: usize,
        eval: impl Fn(&[S], &DVector<S>) -> DVector<S> + Send + Sync + 'static,
    ) -> Self {
        Self::with_dims(dim_param, dim_param, eval)
    }

    /// Builds an estimating function with distinct output length.
    pub fn with_dims(
        dim_param: usize,
        dim_out: usize,
        eval: impl Fn(&[S], &DVector<S>) -> DVector<S> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim_param,
            dim_out,
            eval: Box::new(eval),
            jac: None,
            warm_start: None,
            start_fn: None,
        }
    }

    /// Attaches an analytic Jacobian (`dim_out × dim_param`).
    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[S], &DVector<S>) -> DMatrix<S> + Send + Sync + 'static,
    ) -> Self {
        self.jac = Some(Box::new(jac));
        self
    }

    /// Attaches a warm start used instead of the zero vector.
    pub fn with_warm_start(mut self, start: DVector<S>) -> Self {
        assert_eq!(start.len(), self.dim_param, "warm start has wrong length");
        self.warm_start = Some(start);
        self
    }

    /// Attaches a warm-start builder consulted with the exact data and
    /// weights of each solve; it takes precedence over
    /// [`Self::with_warm_start`] whenever it returns `Some`. Must be
    /// deterministic in its inputs.
    pub fn with_warm_start_fn(
        mut self,
        start: impl Fn(&Dataset<S>, &[S]) -> Option<DVector<S>> + Send + Sync + 'static,
    ) -> Self {
        self.start_fn = Some(Box::new(start));
        self
    }
}

impl<S: Scalar> EstimatingEquation<S> for EstimatingFunction<S> {
    fn dim_param(&self) -> usize {
        self.dim_param
    }

    fn dim_out(&self) -> usize {
        self.dim_out
    }

    fn evaluate(&self, row: &[S], param: &DVector<S>) -> DVector<S> {
        (self.eval)(row, param)
    }

    fn analytic_jacobian(&self, row: &[S], param: &DVector<S>) -> Option<DMatrix<S>> {
        self.jac.as_ref().map(|j| j(row, param))
    }

    fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    fn warm_start(&self) -> Option<DVector<S>> {
        self.warm_start.clone()
    }

    fn warm_start_for(&self, data: &Dataset<S>, weights: &[S]) -> Option<DVector<S>> {
        self.start_fn.as_ref().and_then(|f| f(data, weights))
    }
}

/// Scalar transform `f(row, plugin)` through which a second stage depends on
/// the plug-in parameter, together with the pieces a chain rule needs.
///
/// When a model declares this, the Jacobian of the second stage with respect
/// to the plug-in parameter is computed as the outer product
/// `sensitivity(row, f, param) · grad_plugin(row, plugin)ᵀ`.
pub struct PluginTransform<S: Scalar> {
    value: TransformValueFn<S>,
    grad_plugin: TransformGradFn<S>,
    sensitivity: SensitivityFn<S>,
}

impl<S: Scalar> PluginTransform<S> {
    /// Builds a transform from its value, its gradient in the plug-in
    /// parameter, and the second stage's sensitivity to the transform value.
    pub fn new(
        value: impl Fn(&[S], &DVector<S>) -> S + Send + Sync + 'static,
        grad_plugin: impl Fn(&[S], &DVector<S>) -> DVector<S> + Send + Sync + 'static,
        sensitivity: impl Fn(&[S], S, &DVector<S>) -> DVector<S> + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Box::new(value),
            grad_plugin: Box::new(grad_plugin),
            sensitivity: Box::new(sensitivity),
        }
    }

    /// Transform value at one observation.
    pub fn value(&self, row: &[S], plugin: &DVector<S>) -> S {
        (self.value)(row, plugin)
    }

    /// Gradient of the transform in the plug-in parameter.
    pub fn grad_plugin(&self, row: &[S], plugin: &DVector<S>) -> DVector<S> {
        (self.grad_plugin)(row, plugin)
    }

    /// Derivative of the second-stage score in the transform value.
    pub fn sensitivity(&self, row: &[S], value: S, param: &DVector<S>) -> DVector<S> {
        (self.sensitivity)(row, value, param)
    }
}

/// Second-stage estimating function 𝒦(row, param, plugin).
///
/// `param` is the parameter the stage is solved for; `plugin` is the
/// first-stage parameter held fixed during that solve.
pub struct SecondStage<S: Scalar> {
    dim_param: usize,
    eval: StageTwoEvalFn<S>,
    jac_param: Option<StageTwoJacFn<S>>,
    jac_plugin: Option<StageTwoJacFn<S>>,
    transform: Option<PluginTransform<S>>,
    warm_start: Option<DVector<S>>,
}

impl<S: Scalar> SecondStage<S> {
    /// Builds a square second stage from its score evaluation.
    pub fn new(
        dim_param: usize,
        eval: impl Fn(&[S], &DVector<S>, &DVector<S>) -> DVector<S> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim_param,
            eval: Box::new(eval),
            jac_param: None,
            jac_plugin: None,
            transform: None,
            warm_start: None,
        }
    }

    /// Attaches the analytic Jacobian in the stage's own parameter.
    pub fn with_param_jacobian(
        mut self,
        jac: impl Fn(&[S], &DVector<S>, &DVector<S>) -> DMatrix<S> + Send + Sync + 'static,
    ) -> Self {
        self.jac_param = Some(Box::new(jac));
        self
    }

    /// Attaches the analytic Jacobian in the plug-in parameter.
    pub fn with_plugin_jacobian(
        mut self,
        jac: impl Fn(&[S], &DVector<S>, &DVector<S>) -> DMatrix<S> + Send + Sync + 'static,
    ) -> Self {
        self.jac_plugin = Some(Box::new(jac));
        self
    }

    /// Declares the scalar transform carrying all plug-in dependence; the
    /// plug-in Jacobian is then assembled by the chain rule.
    pub fn with_transform(mut self, transform: PluginTransform<S>) -> Self {
        self.transform = Some(transform);
        self
    }

    /// Attaches a warm start used instead of the zero vector.
    pub fn with_warm_start(mut self, start: DVector<S>) -> Self {
        assert_eq!(start.len(), self.dim_param, "warm start has wrong length");
        self.warm_start = Some(start);
        self
    }

    /// Parameter length of this stage.
    pub fn dim_param(&self) -> usize {
        self.dim_param
    }

    /// Score contribution of one observation.
    pub fn evaluate(&self, row: &[S], param: &DVector<S>, plugin: &DVector<S>) -> DVector<S> {
        (self.eval)(row, param, plugin)
    }

    /// Analytic Jacobian in the stage's own parameter, if declared.
    pub fn analytic_param_jacobian(
        &self,
        row: &[S],
        param: &DVector<S>,
        plugin: &DVector<S>,
    ) -> Option<DMatrix<S>> {
        self.jac_param.as_ref().map(|j| j(row, param, plugin))
    }

    /// Whether an analytic param Jacobian is declared.
    pub fn has_analytic_param_jacobian(&self) -> bool {
        self.jac_param.is_some()
    }

    /// Whether the plug-in Jacobian avoids numerical differentiation
    /// (declared transform or explicit analytic Jacobian).
    pub fn has_analytic_plugin_jacobian(&self) -> bool {
        self.transform.is_some() || self.jac_plugin.is_some()
    }

    /// The declared transform, if any.
    pub fn transform(&self) -> Option<&PluginTransform<S>> {
        self.transform.as_ref()
    }

    /// Warm start for this stage, if declared.
    pub fn warm_start(&self) -> Option<DVector<S>> {
        self.warm_start.clone()
    }

    /// Jacobian of the score in the plug-in parameter, `dim_param × dim_plugin`.
    ///
    /// Preference order: chain rule through the declared transform, then the
    /// explicit analytic Jacobian, then central differences.
    pub fn plugin_jacobian(
        &self,
        row: &[S],
        param: &DVector<S>,
        plugin: &DVector<S>,
        step_factor: Option<S>,
    ) -> Result<DMatrix<S>> {
        if let Some(t) = &self.transform {
            let value = t.value(row, plugin);
            let sens = t.sensitivity(row, value, param);
            let grad = t.grad_plugin(row, plugin);
            // Outer product: (dim_param × 1) · (1 × dim_plugin).
            return Ok(DMatrix::from_fn(self.dim_param, plugin.len(), |r, c| {
                sens[r] * grad[c]
            }));
        }
        if let Some(jac) = &self.jac_plugin {
            return Ok(jac(row, param, plugin));
        }
        numerical_jacobian(
            |theta| Ok((self.eval)(row, param, theta)),
            plugin,
            self.dim_param,
            step_factor,
        )
    }

    /// Views this stage at a fixed plug-in value as a plain estimating
    /// equation in the stage's own parameter.
    pub fn at<'a>(&'a self, plugin: &'a DVector<S>) -> PluggedSecondStage<'a, S> {
        PluggedSecondStage {
            stage: self,
            plugin,
        }
    }
}

/// A [`SecondStage`] with the plug-in parameter frozen, usable wherever an
/// [`EstimatingEquation`] is expected.
pub struct PluggedSecondStage<'a, S: Scalar> {
    stage: &'a SecondStage<S>,
    plugin: &'a DVector<S>,
}

impl<S: Scalar> EstimatingEquation<S> for PluggedSecondStage<'_, S> {
    fn dim_param(&self) -> usize {
        self.stage.dim_param
    }

    fn dim_out(&self) -> usize {
        self.stage.dim_param
    }

    fn evaluate(&self, row: &[S], param: &DVector<S>) -> DVector<S> {
        (self.stage.eval)(row, param, self.plugin)
    }

    fn analytic_jacobian(&self, row: &[S], param: &DVector<S>) -> Option<DMatrix<S>> {
        self.stage.analytic_param_jacobian(row, param, self.plugin)
    }

    fn has_analytic_jacobian(&self) -> bool {
        self.stage.has_analytic_param_jacobian()
    }

    fn warm_start(&self) -> Option<DVector<S>> {
        self.stage.warm_start.clone()
    }
}

/// First stage plus second stage, fitted sequentially: the first stage is
/// solved on its own, and its estimate is plugged into the second stage,
/// never re-estimated jointly.
pub struct TwoStageSystem<S: Scalar> {
    /// First-stage function Ψ(row, θ).
    pub first: EstimatingFunction<S>,
    /// Second-stage function 𝒦(row, β, θ).
    pub second: SecondStage<S>,
}

impl<S: Scalar> TwoStageSystem<S> {
    /// Pairs the two stages.
    pub fn new(first: EstimatingFunction<S>, second: SecondStage<S>) -> Self {
        Self { first, second }
    }

    /// First-stage parameter length.
    pub fn dim_first(&self) -> usize {
        self.first.dim_param()
    }

    /// Second-stage parameter length.
    pub fn dim_second(&self) -> usize {
        self.second.dim_param()
    }

    /// Combined parameter length.
    pub fn dim_total(&self) -> usize {
        self.dim_first() + self.dim_second()
    }
}

/// Largest entrywise relative error between an analytic Jacobian and central
/// differences, over random probe parameters and dataset rows.
///
/// Probes are `center + spread · z` with standard-normal `z`, drawn from a
/// seeded generator; rows cycle through the dataset. The relative error of
/// an entry pair `(a, n)` is `|a − n| / max(1, |n|)`.
pub fn check_jacobian<S: Scalar>(
    eq: &dyn EstimatingEquation<S>,
    data: &Dataset<S>,
    center: &DVector<S>,
    spread: S,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for p in 0..probes {
        let param = perturb(center, spread, &mut rng);
        let row = data.row(p % data.n_rows());
        let analytic = eq.analytic_jacobian(row, &param).ok_or_else(|| {
            Error::InvalidArgument("check_jacobian called without an analytic Jacobian".into())
        })?;
        let numeric =
            numerical_jacobian(|x| Ok(eq.evaluate(row, x)), &param, eq.dim_out(), None)?;
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Largest relative error of a second stage's plug-in Jacobian (chain rule or
/// explicit) against central differences in the plug-in parameter, over
/// random probes. Also exercises the param Jacobian when one is declared.
pub fn check_second_stage<S: Scalar>(
    stage: &SecondStage<S>,
    data: &Dataset<S>,
    param_center: &DVector<S>,
    plugin_center: &DVector<S>,
    spread: S,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for p in 0..probes {
        let param = perturb(param_center, spread, &mut rng);
        let plugin = perturb(plugin_center, spread, &mut rng);
        let row = data.row(p % data.n_rows());
        if stage.has_analytic_plugin_jacobian() {
            let declared = stage.plugin_jacobian(row, &param, &plugin, None)?;
            let numeric = numerical_jacobian(
                |theta| Ok(stage.evaluate(row, &param, theta)),
                &plugin,
                stage.dim_param(),
                None,
            )?;
            worst = worst.max(max_relative_error(&declared, &numeric));
        }
        if let Some(analytic) = stage.analytic_param_jacobian(row, &param, &plugin) {
            let numeric = numerical_jacobian(
                |beta| Ok(stage.evaluate(row, beta, &plugin)),
                &param,
                stage.dim_param(),
                None,
            )?;
            worst = worst.max(max_relative_error(&analytic, &numeric));
        }
    }
    Ok(worst)
}

fn perturb<S: Scalar>(center: &DVector<S>, spread: S, rng: &mut ChaCha8Rng) -> DVector<S> {
    DVector::from_fn(center.len(), |i, _| {
        let z: f64 = rng.sample(StandardNormal);
        center[i] + spread * real::<S>(z)
    })
}

fn max_relative_error<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "jacobian shapes differ");
    let mut worst = S::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        let err = sabs(*x - *y) / smax(S::one(), sabs(*y));
        worst = smax(worst, err);
    }
    crate::scalar::to_f64(worst)
}
