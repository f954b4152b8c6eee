//! Physical activity scoring pipeline.
//!
//! Stage 1 fits a logistic model of a binary health indicator `W` on eight
//! activity components — five aerobic components entering through
//! three-parameter saturating curves, sitting and television hours entering
//! linearly, and sleep entering quadratically — plus covariates. The fitted
//! marginals are offset to be nonnegative over the observed data and rescaled
//! so the best achievable total is 100, giving each person a 0–100 activity
//! score. Stage 2 fits a logistic risk model of an outcome `Y` on that score
//! and the covariates, with the score's dependence on the stage-1 parameters
//! carried through the influence calculus by the chain rule.
//!
//! Because the offsets and the scale are extrema over the observed table,
//! their parameter derivatives are envelope derivatives: the gradient of a
//! running minimum or maximum is the gradient of the marginal at the row
//! attaining it. Those derivatives are exact wherever the attaining row is
//! unique, which is everywhere except parameter values where two rows tie.

use std::collections::HashMap;
use std::io;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{expit, expit_prime, logit};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::solve::{solve_weighted, SolverConfig};
use crate::system::{EstimatingFunction, PluginTransform, SecondStage, TwoStageSystem};

/// Names of the five aerobic components, in row-layout order.
pub const AEROBIC_COMPONENTS: [&str; 5] = [
    "vigorous",
    "moderate",
    "light_household",
    "mvpa_household",
    "weight_training",
];

/// Names of all eight activity components, in row-layout order: the aerobic
/// five, then sitting hours, television hours, and sleep hours.
pub const ACTIVITY_COLUMNS: [&str; 8] = [
    "vigorous",
    "moderate",
    "light_household",
    "mvpa_household",
    "weight_training",
    "sit_other",
    "tv",
    "sleep",
];

/// Full column set of an activity table as simulated and consumed here.
pub(super) const FULL_COLUMNS: [&str; 12] = [
    "W",
    "Y",
    "vigorous",
    "moderate",
    "light_household",
    "mvpa_household",
    "weight_training",
    "sit_other",
    "tv",
    "sleep",
    "z1",
    "z2",
];

const N_AEROBIC: usize = 5;
const N_COMPONENTS: usize = 8;
/// Component indices of the non-curve activity terms.
const ACT_SIT: usize = 5;
const ACT_TV: usize = 6;
const ACT_SLEEP: usize = 7;
/// Slots of the flattened parameter vector after the five (b, c, d) blocks.
const IDX_SIT: usize = 15;
const IDX_TV: usize = 16;
const IDX_SLEEP_LIN: usize = 17;
const IDX_SLEEP_QUAD: usize = 18;
/// First covariate-coefficient slot.
const IDX_COV: usize = 19;

/// Version stamp written into score parameter files.
pub const SCORE_PARAMS_FORMAT_VERSION: u32 = 1;

/// Three-parameter saturating dose-response curve
/// `m(x) = d * H(b * ln(x / c))`, equivalently `d - d / (1 + (x/c)^b)`.
///
/// `c` is the half-saturation point (`m(c) = d/2`), `d` the asymptote, and
/// `b` the shape. The curve is defined as 0 at `x = 0` (its limit for
/// `b > 0`) and is nondecreasing on `x >= 0` whenever `b > 0` and `d >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturatingCurve {
    /// Shape parameter.
    pub b: f64,
    /// Half-saturation point.
    pub c: f64,
    /// Asymptote.
    pub d: f64,
}

impl SaturatingCurve {
    /// Curve value at `x`.
    pub fn value(&self, x: f64) -> f64 {
        curve_value(self.b, self.c, self.d, x)
    }

    /// Gradient `(dm/db, dm/dc, dm/dd)` at `x`.
    pub fn gradient(&self, x: f64) -> [f64; 3] {
        curve_gradient(self.b, self.c, self.d, x)
    }
}

fn curve_value(b: f64, c: f64, d: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    d * expit(b * (x / c).ln())
}

fn curve_gradient(b: f64, c: f64, d: f64, x: f64) -> [f64; 3] {
    if x <= 0.0 {
        return [0.0; 3];
    }
    let l = (x / c).ln();
    let u = b * l;
    let h = expit(u);
    let hp = h * (1.0 - h);
    [d * hp * l, -d * hp * b / c, h]
}

/// Hessian of the curve value in `(b, c, d)`, row-major symmetric.
fn curve_hessian(b: f64, c: f64, d: f64, x: f64) -> [[f64; 3]; 3] {
    if x <= 0.0 {
        return [[0.0; 3]; 3];
    }
    let l = (x / c).ln();
    let s = expit(b * l);
    let sp = s * (1.0 - s);
    let spp = sp * (1.0 - 2.0 * s);
    let bb = d * l * l * spp;
    let bc = -d / c * (sp + b * l * spp);
    let bd = l * sp;
    let cc = d * b / (c * c) * (sp + b * spp);
    let cd = -b / c * sp;
    [[bb, bc, bd], [bc, cc, cd], [bd, cd, 0.0]]
}

/// Full parameter set of the activity logit.
///
/// The covariate coefficients align one-to-one with whatever covariate
/// vector is passed alongside the activity values; there is no implicit
/// intercept. The shipped pipeline passes `(1, z...)` — a leading constant
/// column — so its first covariate coefficient acts as the intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityScoreParams {
    /// One saturating curve per aerobic component, in
    /// [`AEROBIC_COMPONENTS`] order.
    pub aerobic: [SaturatingCurve; 5],
    /// Slope on sitting hours.
    pub sit_slope: f64,
    /// Slope on television hours.
    pub tv_slope: f64,
    /// Linear sleep coefficient.
    pub sleep_linear: f64,
    /// Quadratic sleep coefficient.
    pub sleep_quadratic: f64,
    /// Coefficients on the covariate vector, in its order.
    pub covariate_coefficients: Vec<f64>,
}

impl ActivityScoreParams {
    /// Number of covariate coefficients.
    pub fn n_covariates(&self) -> usize {
        self.covariate_coefficients.len()
    }

    /// Length of the flattened parameter vector.
    pub fn dim(&self) -> usize {
        IDX_COV + self.covariate_coefficients.len()
    }

    /// Flattens into the solver's parameter layout: five `(b, c, d)` blocks,
    /// then the sit, tv, and two sleep coefficients, then the covariate
    /// coefficients.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        for (j, curve) in self.aerobic.iter().enumerate() {
            v[3 * j] = curve.b;
            v[3 * j + 1] = curve.c;
            v[3 * j + 2] = curve.d;
        }
        v[IDX_SIT] = self.sit_slope;
        v[IDX_TV] = self.tv_slope;
        v[IDX_SLEEP_LIN] = self.sleep_linear;
        v[IDX_SLEEP_QUAD] = self.sleep_quadratic;
        for (j, coef) in self.covariate_coefficients.iter().enumerate() {
            v[IDX_COV + j] = *coef;
        }
        v
    }

    /// Rebuilds the structured parameters from a flattened vector.
    pub fn from_vector(values: &[f64], n_covariates: usize) -> Result<Self> {
        let expected = IDX_COV + n_covariates;
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "activity parameter vector has length {}, expected {expected} \
                 for {n_covariates} covariate(s)",
                values.len()
            )));
        }
        let mut aerobic = [SaturatingCurve {
            b: 0.0,
            c: 0.0,
            d: 0.0,
        }; 5];
        for (j, curve) in aerobic.iter_mut().enumerate() {
            *curve = SaturatingCurve {
                b: values[3 * j],
                c: values[3 * j + 1],
                d: values[3 * j + 2],
            };
        }
        Ok(Self {
            aerobic,
            sit_slope: values[IDX_SIT],
            tv_slope: values[IDX_TV],
            sleep_linear: values[IDX_SLEEP_LIN],
            sleep_quadratic: values[IDX_SLEEP_QUAD],
            covariate_coefficients: values[IDX_COV..].to_vec(),
        })
    }
}

fn marginal_from_theta(theta: &[f64], component: usize, x: f64) -> f64 {
    match component {
        0..=4 => curve_value(
            theta[3 * component],
            theta[3 * component + 1],
            theta[3 * component + 2],
            x,
        ),
        ACT_SIT => theta[IDX_SIT] * x,
        ACT_TV => theta[IDX_TV] * x,
        ACT_SLEEP => theta[IDX_SLEEP_LIN] * x + theta[IDX_SLEEP_QUAD] * x * x,
        _ => unreachable!("activity component index {component} out of range"),
    }
}

/// Accumulates `weight * d marginal_k / d theta` into `out`.
fn add_marginal_gradient(theta: &[f64], component: usize, x: f64, weight: f64, out: &mut DVector<f64>) {
    match component {
        0..=4 => {
            let g = curve_gradient(
                theta[3 * component],
                theta[3 * component + 1],
                theta[3 * component + 2],
                x,
            );
            out[3 * component] += weight * g[0];
            out[3 * component + 1] += weight * g[1];
            out[3 * component + 2] += weight * g[2];
        }
        ACT_SIT => out[IDX_SIT] += weight * x,
        ACT_TV => out[IDX_TV] += weight * x,
        ACT_SLEEP => {
            out[IDX_SLEEP_LIN] += weight * x;
            out[IDX_SLEEP_QUAD] += weight * x * x;
        }
        _ => unreachable!("activity component index {component} out of range"),
    }
}

/// Log-odds of the activity model and, optionally, its parameter gradient.
fn eta_and_grad(
    theta: &[f64],
    activity_at: impl Fn(usize) -> f64,
    covariate_at: impl Fn(usize) -> f64,
    n_covariates: usize,
    mut gradient: Option<&mut DVector<f64>>,
) -> f64 {
    let mut eta = 0.0;
    for k in 0..N_COMPONENTS {
        let x = activity_at(k);
        eta += marginal_from_theta(theta, k, x);
        if let Some(g) = gradient.as_deref_mut() {
            add_marginal_gradient(theta, k, x, 1.0, g);
        }
    }
    for j in 0..n_covariates {
        let z = covariate_at(j);
        eta += theta[IDX_COV + j] * z;
        if let Some(g) = gradient.as_deref_mut() {
            g[IDX_COV + j] += z;
        }
    }
    eta
}

fn check_component_value(name: &str, component: usize, x: f64) -> Result<()> {
    if component == ACT_SLEEP {
        if !(0.0..=24.0).contains(&x) {
            return Err(Error::Domain(format!(
                "'{name}' must lie in [0, 24] hours, got {x}"
            )));
        }
    } else if !(x >= 0.0) {
        return Err(Error::Domain(format!(
            "'{name}' must be nonnegative, got {x}"
        )));
    }
    Ok(())
}

fn validate_activity_values(values: &[f64]) -> Result<()> {
    for (k, &x) in values.iter().enumerate() {
        check_component_value(ACTIVITY_COLUMNS[k], k, x)?;
    }
    Ok(())
}

/// Log-odds that the health indicator is 1 for the given activity values
/// (eight components in [`ACTIVITY_COLUMNS`] order) and covariates.
///
/// With every activity value 0 and every covariate 0 the result is exactly 0:
/// there is no implicit intercept.
pub fn activity_logit(
    params: &ActivityScoreParams,
    activity: &[f64],
    covariates: &[f64],
) -> Result<f64> {
    if activity.len() != N_COMPONENTS {
        return Err(Error::InvalidArgument(format!(
            "expected {N_COMPONENTS} activity values, got {}",
            activity.len()
        )));
    }
    if covariates.len() != params.covariate_coefficients.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} covariate(s), got {}",
            params.covariate_coefficients.len(),
            covariates.len()
        )));
    }
    validate_activity_values(activity)?;
    let theta = params.to_vector();
    Ok(eta_and_grad(
        theta.as_slice(),
        |k| activity[k],
        |j| covariates[j],
        covariates.len(),
        None,
    ))
}

/// Value of one component's marginal at `x` (component indices follow
/// [`ACTIVITY_COLUMNS`]).
pub fn marginal_value(params: &ActivityScoreParams, component: usize, x: f64) -> Result<f64> {
    if component >= N_COMPONENTS {
        return Err(Error::InvalidArgument(format!(
            "component index {component} out of range 0..{N_COMPONENTS}"
        )));
    }
    check_component_value(ACTIVITY_COLUMNS[component], component, x)?;
    let theta = params.to_vector();
    Ok(marginal_from_theta(theta.as_slice(), component, x))
}

/// Offsets and scale mapping the summed activity marginals onto 0–100.
///
/// Each marginal is shifted by the absolute value of its minimum over the
/// observed table, so every shifted marginal is nonnegative there; `total`
/// is the sum of the shifted marginals' observed maxima, and `scale` is
/// `100 / total`, so a person attaining every component's optimum scores
/// exactly 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreScaling {
    /// Per-component shift: `|min|` of the marginal over the build table.
    pub offsets: [f64; 8],
    /// Per-component maximum of the shifted marginal over the build table.
    pub peaks: [f64; 8],
    /// Sum of `peaks`; the best achievable unscaled total.
    pub total: f64,
    /// `100 / total`.
    pub scale: f64,
}

/// Scaling plus the envelope derivatives the influence calculus needs.
struct ScalingComputation {
    scaling: ScoreScaling,
    /// `sum_k d offset_k / d theta`.
    offsets_grad_sum: DVector<f64>,
    /// `d scale / d theta = -(scale / total) * d total / d theta`.
    scale_grad: DVector<f64>,
}

/// Computes the scaling over `n` rows of eight activity values each
/// (row-major). Returns `None` when a marginal evaluates to a non-finite
/// value or the total is not strictly positive.
fn compute_scaling(theta: &[f64], values: &[f64], n: usize) -> Option<ScalingComputation> {
    if n == 0 {
        return None;
    }
    let dim = theta.len();
    let mut offsets = [0.0; 8];
    let mut peaks = [0.0; 8];
    let mut total = 0.0;
    let mut offsets_grad_sum = DVector::zeros(dim);
    let mut maxima_grad_sum = DVector::zeros(dim);
    for k in 0..N_COMPONENTS {
        let first = marginal_from_theta(theta, k, values[k]);
        if !first.is_finite() {
            return None;
        }
        let (mut min_v, mut max_v) = (first, first);
        let (mut min_x, mut max_x) = (values[k], values[k]);
        for i in 1..n {
            let x = values[i * N_COMPONENTS + k];
            let m = marginal_from_theta(theta, k, x);
            if !m.is_finite() {
                return None;
            }
            if m < min_v {
                min_v = m;
                min_x = x;
            }
            if m > max_v {
                max_v = m;
                max_x = x;
            }
        }
        offsets[k] = min_v.abs();
        peaks[k] = max_v + offsets[k];
        total += peaks[k];
        // d |min| = sign(min) * d min; the derivative of the running
        // extremum is the marginal's gradient at the attaining value.
        let sign = if min_v >= 0.0 { 1.0 } else { -1.0 };
        add_marginal_gradient(theta, k, min_x, sign, &mut offsets_grad_sum);
        add_marginal_gradient(theta, k, max_x, 1.0, &mut maxima_grad_sum);
    }
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let scale = 100.0 / total;
    let total_grad = maxima_grad_sum + &offsets_grad_sum;
    let scale_grad = total_grad * (-scale / total);
    Some(ScalingComputation {
        scaling: ScoreScaling {
            offsets,
            peaks,
            total,
            scale,
        },
        offsets_grad_sum,
        scale_grad,
    })
}

fn activity_matrix(data: &Dataset<f64>) -> Result<Vec<f64>> {
    let indices = data.column_indices(&ACTIVITY_COLUMNS)?;
    let mut values = Vec::with_capacity(data.n_rows() * N_COMPONENTS);
    for i in 0..data.n_rows() {
        let row = data.row(i);
        for (k, &idx) in indices.iter().enumerate() {
            check_component_value(ACTIVITY_COLUMNS[k], k, row[idx])
                .map_err(|e| Error::Domain(format!("row {}: {e}", i + 1)))?;
            values.push(row[idx]);
        }
    }
    Ok(values)
}

/// Builds the 0–100 rescaling of the summed marginals over the observed
/// table (which must contain the [`ACTIVITY_COLUMNS`]).
pub fn build_score_scaling(
    params: &ActivityScoreParams,
    data: &Dataset<f64>,
) -> Result<ScoreScaling> {
    if data.n_rows() == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            got: 0,
            context: "score scaling requires at least one observation".into(),
        });
    }
    let values = activity_matrix(data)?;
    let theta = params.to_vector();
    compute_scaling(theta.as_slice(), &values, data.n_rows())
        .map(|c| c.scaling)
        .ok_or_else(|| {
            Error::DegenerateRange(
                "offset marginal maxima must sum to a positive finite total".into(),
            )
        })
}

/// 0–100 activity score for one set of component values (in
/// [`ACTIVITY_COLUMNS`] order). Covariates never enter the score.
///
/// Values inside the ranges the scaling was built from always land in
/// [0, 100]; values outside them may fall outside it.
pub fn score(params: &ActivityScoreParams, scaling: &ScoreScaling, activity: &[f64]) -> Result<f64> {
    if activity.len() != N_COMPONENTS {
        return Err(Error::InvalidArgument(format!(
            "expected {N_COMPONENTS} activity values, got {}",
            activity.len()
        )));
    }
    validate_activity_values(activity)?;
    let theta = params.to_vector();
    let mut bracket = 0.0;
    for (k, &x) in activity.iter().enumerate() {
        bracket += marginal_from_theta(theta.as_slice(), k, x) + scaling.offsets[k];
    }
    Ok(scaling.scale * bracket)
}

/// One component's contribution (in points) to the total score at value `x`.
pub fn component_contribution(
    params: &ActivityScoreParams,
    scaling: &ScoreScaling,
    component: usize,
    x: f64,
) -> Result<f64> {
    let m = marginal_value(params, component, x)?;
    Ok(scaling.scale * (m + scaling.offsets[component]))
}

/// Scores every row of a table containing the [`ACTIVITY_COLUMNS`].
pub fn score_column(
    params: &ActivityScoreParams,
    scaling: &ScoreScaling,
    data: &Dataset<f64>,
) -> Result<Vec<f64>> {
    let values = activity_matrix(data)?;
    let theta = params.to_vector();
    let mut out = Vec::with_capacity(data.n_rows());
    for i in 0..data.n_rows() {
        let mut bracket = 0.0;
        for k in 0..N_COMPONENTS {
            bracket += marginal_from_theta(theta.as_slice(), k, values[i * N_COMPONENTS + k])
                + scaling.offsets[k];
        }
        out.push(scaling.scale * bracket);
    }
    Ok(out)
}

/// Fitted score parameters and scaling as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreParamsFile {
    /// File format version; currently [`SCORE_PARAMS_FORMAT_VERSION`].
    pub format_version: u32,
    /// Fitted activity-model parameters.
    pub params: ActivityScoreParams,
    /// Rescaling built on the training table.
    pub scaling: ScoreScaling,
}

impl ScoreParamsFile {
    /// Wraps fitted parameters and scaling with the current format version.
    pub fn new(params: ActivityScoreParams, scaling: ScoreScaling) -> Self {
        Self {
            format_version: SCORE_PARAMS_FORMAT_VERSION,
            params,
            scaling,
        }
    }

    /// Writes pretty-printed JSON.
    pub fn write_json(&self, writer: impl io::Write) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// Reads JSON and rejects unknown format versions.
    pub fn read_json(reader: impl io::Read) -> Result<Self> {
        let file: Self = serde_json::from_reader(reader)?;
        if file.format_version != SCORE_PARAMS_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported score parameter file format_version {}, expected {}",
                file.format_version, SCORE_PARAMS_FORMAT_VERSION
            )));
        }
        Ok(file)
    }
}

/// Resolved column positions of an activity table.
#[derive(Clone, Debug)]
struct ActivityLayout {
    w: usize,
    y: usize,
    activity: [usize; 8],
    /// Covariate columns: everything that is not `W`, `Y`, or an activity
    /// component, in table order. A constant 1 is prepended at use time.
    covariates: Vec<usize>,
}

impl ActivityLayout {
    fn resolve(data: &Dataset<f64>) -> Result<Self> {
        let w = data.column_index("W")?;
        let y = data.column_index("Y")?;
        let mut activity = [0usize; 8];
        for (k, name) in ACTIVITY_COLUMNS.iter().enumerate() {
            activity[k] = data.column_index(name)?;
        }
        let mut used: Vec<usize> = vec![w, y];
        used.extend_from_slice(&activity);
        let covariates = (0..data.n_cols()).filter(|j| !used.contains(j)).collect();
        Ok(Self {
            w,
            y,
            activity,
            covariates,
        })
    }

    /// Parameter dimension: curve and slope slots plus the constant term
    /// and one coefficient per covariate column.
    fn dim_theta(&self) -> usize {
        IDX_COV + 1 + self.covariates.len()
    }
}

fn validate_activity_rows(data: &Dataset<f64>, layout: &ActivityLayout) -> Result<()> {
    for i in 0..data.n_rows() {
        let row = data.row(i);
        for k in 0..N_COMPONENTS {
            check_component_value(ACTIVITY_COLUMNS[k], k, row[layout.activity[k]])
                .map_err(|e| Error::Domain(format!("row {}: {e}", i + 1)))?;
        }
    }
    Ok(())
}

/// Maximum-likelihood score equation of the activity logit:
/// `psi = (d eta / d theta) * (W - H(eta))`, with the exact per-row
/// Jacobian `(W - H(eta)) * (d2 eta / d theta2) - H'(eta) * grad grad^T`.
/// The eta Hessian is nonzero only in the per-curve 3x3 blocks.
///
/// Carries a weight-aware warm-start builder ([`warm_start`]), so each
/// weighted solve — the full fit and every split's subsample alike — starts
/// from a point tailored to exactly the rows it weights.
fn activity_first_stage(layout: ActivityLayout, dim: usize) -> EstimatingFunction<f64> {
    let jac_layout = layout.clone();
    let start_layout = layout.clone();
    EstimatingFunction::new(dim, move |row: &[f64], theta: &DVector<f64>| {
        let mut gradient = DVector::zeros(dim);
        let eta = eta_and_grad(
            theta.as_slice(),
            |k| row[layout.activity[k]],
            |j| if j == 0 { 1.0 } else { row[layout.covariates[j - 1]] },
            1 + layout.covariates.len(),
            Some(&mut gradient),
        );
        let residual = row[layout.w] - expit(eta);
        gradient * residual
    })
    .with_jacobian(move |row: &[f64], theta: &DVector<f64>| {
        let layout = &jac_layout;
        let mut gradient = DVector::zeros(dim);
        let eta = eta_and_grad(
            theta.as_slice(),
            |k| row[layout.activity[k]],
            |j| if j == 0 { 1.0 } else { row[layout.covariates[j - 1]] },
            1 + layout.covariates.len(),
            Some(&mut gradient),
        );
        let residual = row[layout.w] - expit(eta);
        let slope = expit_prime(eta);
        let mut jac = DMatrix::zeros(dim, dim);
        jac.gemm(-slope, &gradient, &gradient.transpose(), 0.0);
        for k in 0..N_AEROBIC {
            let x = row[layout.activity[k]];
            if x > 0.0 {
                let h = curve_hessian(theta[3 * k], theta[3 * k + 1], theta[3 * k + 2], x);
                for (a, row_h) in h.iter().enumerate() {
                    for (b, v) in row_h.iter().enumerate() {
                        jac[(3 * k + a, 3 * k + b)] += residual * v;
                    }
                }
            }
        }
        jac
    })
    .with_warm_start_fn(move |data: &Dataset<f64>, weights: &[f64]| {
        warm_start(data, weights, &start_layout).ok()
    })
}

/// Data-driven starting point for the activity fit on a weighted subsample.
///
/// The all-zero default is unusable here: a zero half-saturation point makes
/// the curve evaluate `0 * inf`, and a flat generic start leaves Newton lost
/// on the ridged sum-of-curves surface. The start is built in stages, every
/// one restricted to the positively-weighted rows:
///
/// 1. Freeze every curve's shape at `b = 1` with `c` at the component's
///    median positive value. The logit is then linear in the remaining
///    parameters, so fitting them is a plain logistic regression — a concave
///    problem the damped solver handles from zero.
/// 2. Refine each curve's `(b, c, d)` by a three-parameter logistic sub-fit
///    against the rest of the logit held fixed, sweeping the curves in order
///    so each refinement sees the previous ones.
/// 3. Re-fit the asymptotes and linear coefficients once more with the
///    refined shapes frozen, realigning the blocks.
/// 4. Push the assembled point up the likelihood by damped curvature steps
///    ([`lm_polish`]) until the mean score is near the solver's tolerance.
///
/// Every stage is best-effort: a failed sub-fit keeps the previous values,
/// and if the first regression fails (degenerate columns), the start falls
/// back to asymptotes of 0.5 with the constant term centering the initial
/// logit on the observed mean of `W`.
fn warm_start(data: &Dataset<f64>, weights: &[f64], layout: &ActivityLayout) -> Result<DVector<f64>> {
    let n = data.n_rows();
    if n == 0 || weights.len() != n {
        return Err(Error::InsufficientData {
            needed: 1,
            got: 0,
            context: "activity warm start requires weighted data".into(),
        });
    }
    let weight_sum: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    if weight_sum <= 0.0 {
        return Err(Error::InsufficientData {
            needed: 1,
            got: 0,
            context: "activity warm start requires positive weights".into(),
        });
    }
    let mut shapes = [(1.0f64, 1.0f64); N_AEROBIC];
    for (k, shape) in shapes.iter_mut().enumerate() {
        let mut positive: Vec<f64> = (0..n)
            .filter(|i| weights[*i] > 0.0)
            .map(|i| data.row(i)[layout.activity[k]])
            .filter(|v| *v > 0.0)
            .collect();
        if !positive.is_empty() {
            positive.sort_by(f64::total_cmp);
            let mid = positive.len() / 2;
            shape.1 = if positive.len() % 2 == 1 {
                positive[mid]
            } else {
                0.5 * (positive[mid - 1] + positive[mid])
            };
        }
    }

    let mut theta = DVector::zeros(layout.dim_theta());
    for (k, shape) in shapes.iter().enumerate() {
        theta[3 * k] = shape.0;
        theta[3 * k + 1] = shape.1;
    }

    match frozen_shape_glm(data, weights, layout, &shapes) {
        Some(gamma) => apply_frozen_shape_fit(&mut theta, &gamma),
        None => {
            for k in 0..N_AEROBIC {
                theta[3 * k + 2] = 0.5;
            }
            let w_mean = (0..n)
                .map(|i| weights[i] * data.row(i)[layout.w])
                .sum::<f64>()
                / weight_sum;
            let base = logit(w_mean.clamp(0.05, 0.95))?;
            let mean_bracket = (0..n)
                .map(|i| {
                    let row = data.row(i);
                    weights[i]
                        * (0..N_COMPONENTS)
                            .map(|k| {
                                marginal_from_theta(theta.as_slice(), k, row[layout.activity[k]])
                            })
                            .sum::<f64>()
                })
                .sum::<f64>()
                / weight_sum;
            theta[IDX_COV] = base - mean_bracket;
            return Ok(theta);
        }
    }

    for k in 0..N_AEROBIC {
        if let Some([b, c, d]) = profile_curve(data, weights, layout, k, &theta) {
            theta[3 * k] = b;
            theta[3 * k + 1] = c;
            theta[3 * k + 2] = d;
        }
    }

    for (k, shape) in shapes.iter_mut().enumerate() {
        *shape = (theta[3 * k], theta[3 * k + 1]);
    }
    if let Some(gamma) = frozen_shape_glm(data, weights, layout, &shapes) {
        apply_frozen_shape_fit(&mut theta, &gamma);
    }
    Ok(lm_polish(data, weights, layout, theta))
}

/// `ln(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 35.0 {
        eta
    } else if eta < -35.0 {
        eta.exp()
    } else {
        eta.exp().ln_1p()
    }
}

/// Pushes a warm-start candidate up the weighted mean log-likelihood by
/// damped curvature steps: solve `(H - lambda I) step = -gradient`, grow
/// `lambda` tenfold until the step raises the likelihood, shrink it on
/// success.
///
/// Around the likelihood ridges of the sum-of-curves logit, a raw Newton
/// direction explodes along the flattest curvature direction and a
/// backtracking line search inches along the valley instead of crossing it.
/// The adaptive damping suppresses exactly those components, so the
/// follow-up Newton solve starts inside its quadratic basin. The likelihood
/// is summed with Neumaier compensation, and once the gradient is small a
/// step that halves its norm is accepted even when the likelihood gain sits
/// below summation noise. Best-effort: returns the best point reached.
fn lm_polish(
    data: &Dataset<f64>,
    weights: &[f64],
    layout: &ActivityLayout,
    theta: DVector<f64>,
) -> DVector<f64> {
    use crate::system::EstimatingEquation;

    let n = data.n_rows();
    let dim = theta.len();
    let weight_sum: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    let stage = activity_first_stage(layout.clone(), dim);
    let mean_loglik = |t: &DVector<f64>| -> f64 {
        let mut total = 0.0f64;
        let mut comp = 0.0f64;
        for i in 0..n {
            if weights[i] <= 0.0 {
                continue;
            }
            let row = data.row(i);
            let eta = eta_and_grad(
                t.as_slice(),
                |k| row[layout.activity[k]],
                |j| if j == 0 { 1.0 } else { row[layout.covariates[j - 1]] },
                1 + layout.covariates.len(),
                None,
            );
            let term = weights[i] * (row[layout.w] * eta - softplus(eta));
            let next = total + term;
            comp += if total.abs() >= term.abs() {
                (total - next) + term
            } else {
                (term - next) + total
            };
            total = next;
        }
        (total + comp) / weight_sum
    };
    let mean_gradient = |t: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(dim);
        for i in 0..n {
            if weights[i] > 0.0 {
                g.axpy(weights[i], &stage.evaluate(data.row(i), t), 1.0);
            }
        }
        g / weight_sum
    };

    let mut best = theta;
    let mut value = mean_loglik(&best);
    if !value.is_finite() {
        return best;
    }
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let gradient = mean_gradient(&best);
        let mut hessian = DMatrix::zeros(dim, dim);
        for i in 0..n {
            if weights[i] > 0.0 {
                let jac = stage
                    .analytic_jacobian(data.row(i), &best)
                    .expect("activity stage declares a jacobian");
                hessian += jac * weights[i];
            }
        }
        hessian /= weight_sum;
        let grad_norm = gradient.amax();
        if grad_norm <= 5e-11 {
            break;
        }
        let noise_floor = 1e-13 * (1.0 + value.abs());
        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = hessian.clone();
            for a in 0..dim {
                damped[(a, a)] -= lambda;
            }
            let Some(step) = damped.lu().solve(&(-&gradient)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = &best + &step;
            let cand_value = mean_loglik(&candidate);
            if !cand_value.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let likelihood_gain = cand_value > value;
            let gradient_gain = grad_norm < 1e-6
                && cand_value >= value - noise_floor
                && mean_gradient(&candidate).amax() <= 0.5 * grad_norm;
            if likelihood_gain || gradient_gain {
                best = candidate;
                value = cand_value;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    best
}

/// Solves the frozen-shape logistic regression on
/// (curve features, hours, sleep, sleep², 1, z...); `None` when it fails.
fn frozen_shape_glm(
    data: &Dataset<f64>,
    weights: &[f64],
    layout: &ActivityLayout,
    shapes: &[(f64, f64); N_AEROBIC],
) -> Option<DVector<f64>> {
    let n_linear = layout.dim_theta() - 2 * N_AEROBIC;
    let shapes = *shapes;
    let glm_layout = layout.clone();
    let glm = EstimatingFunction::new(n_linear, move |row: &[f64], gamma: &DVector<f64>| {
        let f = frozen_shape_features(row, &glm_layout, &shapes, n_linear);
        let eta = f.dot(gamma);
        &f * (row[glm_layout.w] - expit(eta))
    })
    .with_jacobian({
        let glm_layout = layout.clone();
        move |row: &[f64], gamma: &DVector<f64>| {
            let f = frozen_shape_features(row, &glm_layout, &shapes, n_linear);
            let eta = f.dot(gamma);
            let slope = expit_prime(eta);
            -slope * &f * f.transpose()
        }
    });
    match solve_weighted(&glm, data, weights, None, &SolverConfig::default()) {
        Ok(est) if est.converged => Some(est.value),
        _ => None,
    }
}

/// Writes a frozen-shape regression solution (asymptotes, then the linear
/// block) into the matching slots of the full parameter vector.
fn apply_frozen_shape_fit(theta: &mut DVector<f64>, gamma: &DVector<f64>) {
    for k in 0..N_AEROBIC {
        theta[3 * k + 2] = gamma[k];
    }
    for j in 0..gamma.len() - N_AEROBIC {
        theta[IDX_SIT + j] = gamma[N_AEROBIC + j];
    }
}

/// Maximum-likelihood refinement of one curve's `(b, c, d)` with every other
/// parameter frozen at `base`. Returns `None` unless the three-parameter
/// solve converges to a usable shape (positive `b` and `c`).
fn profile_curve(
    data: &Dataset<f64>,
    weights: &[f64],
    layout: &ActivityLayout,
    k: usize,
    base: &DVector<f64>,
) -> Option<[f64; 3]> {
    let x_index = layout.activity[k];
    let offset_eta = {
        let layout = layout.clone();
        let base = base.clone();
        move |row: &[f64]| {
            let full = eta_and_grad(
                base.as_slice(),
                |j| row[layout.activity[j]],
                |j| if j == 0 { 1.0 } else { row[layout.covariates[j - 1]] },
                1 + layout.covariates.len(),
                None,
            );
            full - curve_value(base[3 * k], base[3 * k + 1], base[3 * k + 2], row[x_index])
        }
    };
    let sub = EstimatingFunction::new(3, {
        let offset_eta = offset_eta.clone();
        let w_index = layout.w;
        move |row: &[f64], p: &DVector<f64>| {
            let x = row[x_index];
            let eta = offset_eta(row) + curve_value(p[0], p[1], p[2], x);
            let r = row[w_index] - expit(eta);
            let g = curve_gradient(p[0], p[1], p[2], x);
            DVector::from_vec(vec![g[0] * r, g[1] * r, g[2] * r])
        }
    })
    .with_jacobian({
        let w_index = layout.w;
        move |row: &[f64], p: &DVector<f64>| {
            let x = row[x_index];
            let eta = offset_eta(row) + curve_value(p[0], p[1], p[2], x);
            let r = row[w_index] - expit(eta);
            let slope = expit_prime(eta);
            let g = curve_gradient(p[0], p[1], p[2], x);
            let h = curve_hessian(p[0], p[1], p[2], x);
            let mut jac = DMatrix::zeros(3, 3);
            for a in 0..3 {
                for b in 0..3 {
                    jac[(a, b)] = r * h[a][b] - slope * g[a] * g[b];
                }
            }
            jac
        }
    })
    .with_warm_start(DVector::from_vec(vec![
        base[3 * k],
        base[3 * k + 1],
        base[3 * k + 2],
    ]));
    match solve_weighted(&sub, data, weights, None, &SolverConfig::default()) {
        Ok(est) if est.converged && est.value[0] > 0.0 && est.value[1] > 0.0 => {
            Some([est.value[0], est.value[1], est.value[2]])
        }
        _ => None,
    }
}

/// Regressor vector of the frozen-shape logistic regression behind the warm
/// start: five fixed-shape curve values, the four hour terms, then the
/// constant and covariates.
fn frozen_shape_features(
    row: &[f64],
    layout: &ActivityLayout,
    shapes: &[(f64, f64); N_AEROBIC],
    n_linear: usize,
) -> DVector<f64> {
    let mut f = DVector::zeros(n_linear);
    for k in 0..N_AEROBIC {
        let x = row[layout.activity[k]];
        f[k] = if x > 0.0 {
            expit(shapes[k].0 * (x / shapes[k].1).ln())
        } else {
            0.0
        };
    }
    let sit = row[layout.activity[ACT_SIT]];
    let tv = row[layout.activity[ACT_TV]];
    let sleep = row[layout.activity[ACT_SLEEP]];
    f[N_AEROBIC] = sit;
    f[N_AEROBIC + 1] = tv;
    f[N_AEROBIC + 2] = sleep;
    f[N_AEROBIC + 3] = sleep * sleep;
    f[N_AEROBIC + 4] = 1.0;
    for (j, idx) in layout.covariates.iter().enumerate() {
        f[N_AEROBIC + 5 + j] = row[*idx];
    }
    f
}

/// Per-parameter-vector cache of the score scaling and its envelope
/// derivatives over a fixed table.
///
/// Stage-2 evaluations are per row, but the scaling is an O(n) reduction
/// over the whole table, so it is memoized keyed on the exact bit pattern of
/// the parameter vector. Entries are pure functions of the key, so the cache
/// never affects results, however threads interleave. A failed computation
/// (non-finite marginals, nonpositive total) is cached as NaN so the damped
/// solver treats such parameter values as out of bounds and backtracks.
struct ScalingCache {
    values: Vec<f64>,
    n: usize,
    dim: usize,
    map: RwLock<HashMap<Vec<u64>, Arc<ScalingComputation>>>,
}

impl ScalingCache {
    fn new(values: Vec<f64>, n: usize, dim: usize) -> Self {
        Self {
            values,
            n,
            dim,
            map: RwLock::new(HashMap::new()),
        }
    }

    fn poisoned(&self) -> ScalingComputation {
        ScalingComputation {
            scaling: ScoreScaling {
                offsets: [f64::NAN; 8],
                peaks: [f64::NAN; 8],
                total: f64::NAN,
                scale: f64::NAN,
            },
            offsets_grad_sum: DVector::from_element(self.dim, f64::NAN),
            scale_grad: DVector::from_element(self.dim, f64::NAN),
        }
    }

    fn info(&self, theta: &DVector<f64>) -> Arc<ScalingComputation> {
        let key: Vec<u64> = theta.iter().map(|v| v.to_bits()).collect();
        if let Some(hit) = self.map.read().expect("scaling cache lock").get(&key) {
            return Arc::clone(hit);
        }
        let computed = Arc::new(
            compute_scaling(theta.as_slice(), &self.values, self.n)
                .unwrap_or_else(|| self.poisoned()),
        );
        let mut map = self.map.write().expect("scaling cache lock");
        if map.len() > 4096 {
            map.clear();
        }
        Arc::clone(map.entry(key).or_insert(computed))
    }
}

/// Logistic risk equation on regressors `(f, 1, covariates...)`, where `f`
/// is a caller-supplied scalar function of the row and the stage-1
/// parameter: `K = r * (Y - H(r' beta))` with `r = (f, 1, z)`.
///
/// The parameter order is: coefficient on `f` first, then the constant
/// term, then one coefficient per covariate column. The plug-in dependence
/// enters only through `f`, so the chain rule applies with
/// `dK/df = e0 (Y - H) - r H' beta_f`.
pub fn make_risk_system<F, G>(
    score_value: F,
    score_gradient: G,
    y_index: usize,
    covariate_indices: &[usize],
) -> SecondStage<f64>
where
    F: Fn(&[f64], &DVector<f64>) -> f64 + Send + Sync + 'static,
    G: Fn(&[f64], &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
{
    fn regressors(f: f64, row: &[f64], covariates: &[usize]) -> DVector<f64> {
        let mut r = DVector::zeros(2 + covariates.len());
        r[0] = f;
        r[1] = 1.0;
        for (j, &c) in covariates.iter().enumerate() {
            r[2 + j] = row[c];
        }
        r
    }

    let dim = 2 + covariate_indices.len();
    let value = Arc::new(score_value);
    let covs_eval = covariate_indices.to_vec();
    let covs_jac = covariate_indices.to_vec();
    let covs_sens = covariate_indices.to_vec();
    let value_eval = Arc::clone(&value);
    let value_jac = Arc::clone(&value);

    let second = SecondStage::new(
        dim,
        move |row: &[f64], beta: &DVector<f64>, theta: &DVector<f64>| {
            let r = regressors(value_eval(row, theta), row, &covs_eval);
            let residual = row[y_index] - expit(r.dot(beta));
            r * residual
        },
    )
    .with_param_jacobian(move |row: &[f64], beta: &DVector<f64>, theta: &DVector<f64>| {
        let r = regressors(value_jac(row, theta), row, &covs_jac);
        let slope = expit_prime(r.dot(beta));
        let outer = &r * r.transpose();
        outer * (-slope)
    });

    let transform = PluginTransform::new(
        move |row: &[f64], theta: &DVector<f64>| value(row, theta),
        score_gradient,
        move |row: &[f64], f: f64, beta: &DVector<f64>| {
            let r = regressors(f, row, &covs_sens);
            let eta = r.dot(beta);
            let mut out = r * (-expit_prime(eta) * beta[0]);
            out[0] += row[y_index] - expit(eta);
            out
        },
    );
    second.with_transform(transform)
}

/// Builds the full scoring pipeline over a table containing `W`, `Y`, the
/// [`ACTIVITY_COLUMNS`], and any further columns as covariates.
///
/// Stage 1 is the activity logit's maximum-likelihood score; stage 2 the
/// logistic risk model on the 0–100 score and the covariates. The score's
/// rescaling is rebuilt from this table whenever the stage-1 parameter
/// changes (memoized per parameter vector), and its parameter derivatives
/// are carried through the chain rule, envelope terms included.
pub fn make_activity_system(data: &Dataset<f64>) -> Result<TwoStageSystem<f64>> {
    let layout = ActivityLayout::resolve(data)?;
    validate_activity_rows(data, &layout)?;
    let dim = layout.dim_theta();
    let first = activity_first_stage(layout.clone(), dim);

    let mut values = Vec::with_capacity(data.n_rows() * N_COMPONENTS);
    for i in 0..data.n_rows() {
        let row = data.row(i);
        for k in 0..N_COMPONENTS {
            values.push(row[layout.activity[k]]);
        }
    }
    let cache = Arc::new(ScalingCache::new(values, data.n_rows(), dim));
    let activity_indices = layout.activity;

    let value_cache = Arc::clone(&cache);
    let score_value = move |row: &[f64], theta: &DVector<f64>| -> f64 {
        let info = value_cache.info(theta);
        let mut bracket = 0.0;
        for k in 0..N_COMPONENTS {
            bracket +=
                marginal_from_theta(theta.as_slice(), k, row[activity_indices[k]])
                    + info.scaling.offsets[k];
        }
        info.scaling.scale * bracket
    };

    let grad_cache = Arc::clone(&cache);
    let score_gradient = move |row: &[f64], theta: &DVector<f64>| -> DVector<f64> {
        let info = grad_cache.info(theta);
        let mut marginal_grad = DVector::zeros(dim);
        let mut bracket = 0.0;
        for k in 0..N_COMPONENTS {
            let x = row[activity_indices[k]];
            bracket += marginal_from_theta(theta.as_slice(), k, x) + info.scaling.offsets[k];
            add_marginal_gradient(theta.as_slice(), k, x, 1.0, &mut marginal_grad);
        }
        (marginal_grad + &info.offsets_grad_sum) * info.scaling.scale
            + &info.scale_grad * bracket
    };

    let second = make_risk_system(score_value, score_gradient, layout.y, &layout.covariates);
    Ok(TwoStageSystem::new(first, second))
}

/// Fits the activity logit by maximum likelihood on the full table.
pub fn fit_activity_params(
    data: &Dataset<f64>,
    config: &SolverConfig<f64>,
) -> Result<ActivityScoreParams> {
    let layout = ActivityLayout::resolve(data)?;
    validate_activity_rows(data, &layout)?;
    let dim = layout.dim_theta();
    let first = activity_first_stage(layout.clone(), dim);
    let ones = vec![1.0; data.n_rows()];
    let estimate = solve_weighted(&first, data, &ones, None, config)?.require_converged()?;
    ActivityScoreParams::from_vector(estimate.value.as_slice(), 1 + layout.covariates.len())
}

/// Truth underlying the synthetic activity generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticActivitySpec {
    /// True activity-model parameters; the covariate coefficients align
    /// with `(1, z1, z2)`.
    pub truth: ActivityScoreParams,
    /// True coefficient on the 0–100 score in the risk model.
    pub risk_score_coefficient: f64,
    /// True risk coefficients on `(1, z1, z2)`.
    pub risk_covariate_coefficients: Vec<f64>,
}

impl Default for SyntheticActivitySpec {
    fn default() -> Self {
        let curve = |b: f64, c: f64, d: f64| SaturatingCurve { b, c, d };
        Self {
            truth: ActivityScoreParams {
                aerobic: [
                    curve(1.8, 2.5, 0.9),
                    curve(1.6, 6.0, 1.5),
                    curve(1.6, 2.0, 1.0),
                    curve(1.7, 3.5, 1.2),
                    curve(1.5, 1.0, 0.9),
                ],
                sit_slope: -0.02,
                tv_slope: -0.07,
                sleep_linear: 0.24,
                sleep_quadratic: -0.016,
                covariate_coefficients: vec![-2.9, -0.4, 0.25],
            },
            risk_score_coefficient: -0.02,
            risk_covariate_coefficients: vec![0.8, -0.3, 0.2],
        }
    }
}

/// Draws a synthetic activity table with columns `W, Y, ` the
/// [`ACTIVITY_COLUMNS`], `z1, z2`.
///
/// Activity components follow zero-inflated log-normal laws (vigorous and
/// weight training), log-normal laws (the remaining aerobic components),
/// scaled Beta laws (sitting and television hours), and a clamped normal
/// (sleep, within [3.5, 11] hours). `z1` is a fair coin, `z2` standard
/// normal. `W` is Bernoulli in the true activity logit. `Y` is drawn in a
/// second pass — continuing the same random stream — as Bernoulli in the
/// risk logit evaluated at the true 0–100 score, whose rescaling is built
/// from the generated table itself.
pub fn simulate_activity(spec: &SyntheticActivitySpec, n: usize, seed: u64) -> Result<Dataset<f64>> {
    if spec.truth.covariate_coefficients.len() != 3 {
        return Err(Error::InvalidArgument(
            "synthetic truth needs coefficients for (1, z1, z2)".into(),
        ));
    }
    if spec.risk_covariate_coefficients.len() != 3 {
        return Err(Error::InvalidArgument(
            "synthetic risk model needs coefficients for (1, z1, z2)".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot simulate an empty table".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let valid = "fixed synthetic law parameters";
    let aerobic_laws = [
        LogNormal::new(1.0, 1.1).expect(valid),
        LogNormal::new(1.8, 1.0).expect(valid),
        LogNormal::new(0.7, 1.1).expect(valid),
        LogNormal::new(1.2, 1.0).expect(valid),
        LogNormal::new(0.0, 1.3).expect(valid),
    ];
    // Zero-inflation probabilities; only vigorous and weight training have
    // structural zeros.
    let zero_prob = [0.2, 0.0, 0.0, 0.0, 0.25];
    let sit_law = Beta::new(2.0, 3.0).expect(valid);
    let tv_law = Beta::new(2.0, 2.5).expect(valid);
    let sleep_law = Normal::new(7.3, 1.1).expect(valid);

    let theta = spec.truth.to_vector();
    let mut activity = vec![0.0; n * N_COMPONENTS];
    let mut w = Vec::with_capacity(n);
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    for i in 0..n {
        for (k, law) in aerobic_laws.iter().enumerate() {
            let zeroed = zero_prob[k] > 0.0 && rng.random_bool(zero_prob[k]);
            activity[i * N_COMPONENTS + k] = if zeroed { 0.0 } else { law.sample(&mut rng) };
        }
        activity[i * N_COMPONENTS + ACT_SIT] = 14.0 * sit_law.sample(&mut rng);
        activity[i * N_COMPONENTS + ACT_TV] = 10.0 * tv_law.sample(&mut rng);
        let sleep: f64 = sleep_law.sample(&mut rng);
        activity[i * N_COMPONENTS + ACT_SLEEP] = sleep.clamp(3.5, 11.0);
        let zi1 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let zi2: f64 = StandardNormal.sample(&mut rng);
        let acts = &activity[i * N_COMPONENTS..(i + 1) * N_COMPONENTS];
        let covariates = [1.0, zi1, zi2];
        let eta = eta_and_grad(theta.as_slice(), |k| acts[k], |j| covariates[j], 3, None);
        w.push(if rng.random_bool(expit(eta)) { 1.0 } else { 0.0 });
        z1.push(zi1);
        z2.push(zi2);
    }

    // Second pass: the risk outcome depends on the score, whose rescaling
    // is defined over the whole generated table.
    let scaling = compute_scaling(theta.as_slice(), &activity, n).ok_or_else(|| {
        Error::DegenerateRange("synthetic truth yields a degenerate score scaling".into())
    })?;
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut bracket = 0.0;
        for k in 0..N_COMPONENTS {
            bracket += marginal_from_theta(theta.as_slice(), k, activity[i * N_COMPONENTS + k])
                + scaling.scaling.offsets[k];
        }
        let score_i = scaling.scaling.scale * bracket;
        let eta = spec.risk_score_coefficient * score_i
            + spec.risk_covariate_coefficients[0]
            + spec.risk_covariate_coefficients[1] * z1[i]
            + spec.risk_covariate_coefficients[2] * z2[i];
        y.push(if rng.random_bool(expit(eta)) { 1.0 } else { 0.0 });
    }

    let mut columns: Vec<(String, Vec<f64>)> = Vec::with_capacity(FULL_COLUMNS.len());
    columns.push(("W".into(), w));
    columns.push(("Y".into(), y));
    for (k, name) in ACTIVITY_COLUMNS.iter().enumerate() {
        columns.push((
            name.to_string(),
            (0..n).map(|i| activity[i * N_COMPONENTS + k]).collect(),
        ));
    }
    columns.push(("z1".into(), z1));
    columns.push(("z2".into(), z2));
    Dataset::from_columns(columns)
}
