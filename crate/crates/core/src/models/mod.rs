//! Ready-made two-stage systems: a scalar location pair, linear and
//! logistic regression pairs with a plug-in transform, and the physical
//! activity scoring pipeline, each with a matching synthetic data generator.

mod activity;
mod linear;
mod logistic;
mod mean;

pub use activity::{
    activity_logit, build_score_scaling, component_contribution, fit_activity_params,
    make_activity_system, make_risk_system, marginal_value, score, score_column,
    simulate_activity, ActivityScoreParams, SaturatingCurve, ScoreParamsFile, ScoreScaling,
    SyntheticActivitySpec, ACTIVITY_COLUMNS, AEROBIC_COMPONENTS, SCORE_PARAMS_FORMAT_VERSION,
};
pub use linear::{make_linear_pair, simulate_linear, LinearPairSpec};
pub use logistic::{make_logistic_pair, simulate_logistic, LogisticPairSpec};
pub use mean::{mean_pair, simulate_mean, MeanPairSpec};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::system::TwoStageSystem;

/// Numerically stable logistic function `H(x) = 1 / (1 + exp(-x))`.
///
/// Evaluates the exponential of a non-positive argument only, so it never
/// overflows and degrades gracefully to 0 or 1 in the tails.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of [`expit`]: `H'(x) = H(x) (1 - H(x))`.
pub fn expit_prime(x: f64) -> f64 {
    let h = expit(x);
    h * (1.0 - h)
}

/// Log-odds `ln(p / (1 - p))`, the inverse of [`expit`].
pub fn logit(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || p == 0.0 || p == 1.0 {
        return Err(Error::Domain(format!(
            "logit requires a probability strictly inside (0, 1), got {p}"
        )));
    }
    Ok((p / (1.0 - p)).ln())
}

/// The models the command line and the simulation harness know by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Scalar location pair: stage 1 a mean, stage 2 a mean shift.
    Mean,
    /// Linear index pair with a plug-in single index in stage 2.
    Linear,
    /// Logistic pair with a quadratic single-index transform in stage 2.
    Logistic,
    /// Activity scoring pipeline: saturating-curve logit, 0-100 score,
    /// logistic risk model on the score.
    Activity,
}

impl ModelKind {
    /// Every known model, in registry order.
    pub fn all() -> [ModelKind; 4] {
        [Self::Mean, Self::Linear, Self::Logistic, Self::Activity]
    }

    /// Registry name used on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Linear => "linear",
            Self::Logistic => "logistic",
            Self::Activity => "activity",
        }
    }

    /// Looks a model up by its registry name.
    pub fn parse(name: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::UnknownModel {
                name: name.to_string(),
                known: Self::all()
                    .iter()
                    .map(|m| m.name())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }

    /// Column names the model expects, in the order its row layout uses.
    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            Self::Mean => &["W", "Y"],
            Self::Linear | Self::Logistic => &["W", "Y", "x1", "x2", "x3"],
            Self::Activity => &activity::FULL_COLUMNS,
        }
    }

    /// Builds the model's two-stage system for a table already projected
    /// onto [`ModelKind::columns`] order (see [`Dataset::select`]).
    ///
    /// Only the activity pipeline actually reads the table (its score
    /// rescaling is defined relative to the observed value ranges); the
    /// other models ignore it apart from a schema check.
    pub fn system(&self, data: &Dataset<f64>) -> Result<TwoStageSystem<f64>> {
        data.column_indices(self.columns())?;
        match self {
            Self::Mean => Ok(mean_pair()),
            Self::Linear => Ok(make_linear_pair(&LinearPairSpec::default())),
            Self::Logistic => Ok(make_logistic_pair(&LogisticPairSpec::default())),
            Self::Activity => make_activity_system(data),
        }
    }

    /// Draws a synthetic table from the model's default generating law.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Dataset<f64>> {
        match self {
            Self::Mean => simulate_mean(&MeanPairSpec::default(), n, seed),
            Self::Linear => simulate_linear(&LinearPairSpec::default(), n, seed),
            Self::Logistic => simulate_logistic(&LogisticPairSpec::default(), n, seed),
            Self::Activity => simulate_activity(&SyntheticActivitySpec::default(), n, seed),
        }
    }

    /// True value of the first second-stage coordinate under the default
    /// generating law, the usual target of coverage experiments.
    pub fn true_target(&self) -> f64 {
        match self {
            Self::Mean => MeanPairSpec::default().beta,
            Self::Linear => LinearPairSpec::default().beta0,
            Self::Logistic => LogisticPairSpec::default().beta0,
            Self::Activity => SyntheticActivitySpec::default().risk_score_coefficient,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expit_matches_naive_form_and_is_stable_in_tails() {
        for x in [-3.0f64, -0.5, 0.0, 0.5, 3.0] {
            assert_relative_eq!(expit(x), 1.0 / (1.0 + (-x).exp()), epsilon = 1e-15);
        }
        assert_eq!(expit(-800.0), 0.0);
        assert_eq!(expit(800.0), 1.0);
        assert!(expit(-800.0).is_finite() && expit(800.0).is_finite());
    }

    #[test]
    fn expit_and_logit_are_inverses() {
        for p in [0.01, 0.3, 0.5, 0.9, 0.999] {
            assert_relative_eq!(expit(logit(p).unwrap()), p, epsilon = 1e-12);
        }
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
        assert!(logit(-0.2).is_err());
    }

    #[test]
    fn expit_prime_matches_central_difference() {
        let h = 1e-6;
        for x in [-2.0, 0.0, 1.3] {
            let fd = (expit(x + h) - expit(x - h)) / (2.0 * h);
            assert_relative_eq!(expit_prime(x), fd, epsilon = 1e-9);
        }
    }

    #[test]
    fn registry_round_trips_names() {
        for kind in ModelKind::all() {
            assert_eq!(ModelKind::parse(kind.name()).unwrap(), kind);
        }
        let err = ModelKind::parse("quadratic").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("quadratic"), "got: {msg}");
        assert!(msg.contains("linear"), "got: {msg}");
    }

    #[test]
    fn declared_columns_match_simulated_tables() {
        for kind in ModelKind::all() {
            let data = kind.simulate(40, 11).unwrap();
            let projected = data.select(kind.columns()).unwrap();
            assert_eq!(projected.n_cols(), kind.columns().len());
            let system = kind.system(&projected).unwrap();
            assert!(system.dim_first() >= 1);
            assert!(system.dim_second() >= 1);
        }
    }
}
