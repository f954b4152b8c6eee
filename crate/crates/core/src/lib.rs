//! Split-sample two-stage estimation with influence-function standard errors.
//!
//! The pipeline this crate implements:
//!
//! 1. Randomly split a sample into an estimation part and an inference part
//!    (independent Bernoulli(π) indicators), possibly `B` times.
//! 2. On each split, solve a first-stage estimating equation on the
//!    estimation part, plug the estimate into a second-stage equation, and
//!    solve that on the inference part — never jointly.
//! 3. Average the per-split estimates, and estimate their joint sampling
//!    covariance from averaged per-observation influence rows, so the
//!    intervals account for both stages and for the randomness of the
//!    splits.
//!
//! A full-sample "stacked" variant solves both stages on all rows and is
//! asymptotically equivalent to the split estimator at π = 1/2; it ships
//! alongside as a cross-check. A small model zoo (linear, logistic, and a
//! composite activity-scoring pipeline), a coverage simulation harness, and
//! CSV/JSON interfaces round out the crate.
//!
//! # Module map
//!
//! - [`scalar`]: the [`Scalar`](scalar::Scalar) abstraction the numerical
//!   core is generic over (`f32`/`f64`).
//! - [`data`]: column-named observation tables and CSV I/O.
//! - [`system`]: estimating-function types and two-stage wiring.
//! - [`numdiff`]: central-difference Jacobians.
//! - [`solve`]: damped Newton solver for weighted estimating equations.
//! - [`split`]: split generation, per-split and aggregated fits, influence
//!   rows, sandwich covariance, and Wald intervals.
//! - [`stacked`]: full-sample stacked fit and the split-vs-stacked
//!   equivalence report.
//! - [`models`]: the model zoo and synthetic data generators.
//! - [`sim`]: coverage and interval-stability (B-sweep) harnesses.
//!
//! Everything numerical is generic over the scalar type; the aliases at the
//! crate root pin the common double-precision instantiation.

pub mod data;
pub mod error;
pub mod models;
pub mod numdiff;
pub mod scalar;
pub mod sim;
pub mod solve;
pub mod split;
pub mod stacked;
pub mod system;

pub use error::{Error, Result};

/// Double-precision observation table.
pub type Dataset64 = data::Dataset<f64>;
/// Double-precision solver configuration.
pub type SolverConfig64 = solve::SolverConfig<f64>;
/// Double-precision single-equation estimate.
pub type ParamEstimate64 = solve::ParamEstimate<f64>;
/// Double-precision estimating function.
pub type EstimatingFunction64 = system::EstimatingFunction<f64>;
/// Double-precision second stage.
pub type SecondStage64 = system::SecondStage<f64>;
/// Double-precision two-stage system.
pub type TwoStageSystem64 = system::TwoStageSystem<f64>;
/// Double-precision per-split fit.
pub type SplitFit64 = split::SplitFit<f64>;
/// Double-precision multi-split fit.
pub type MultiSplitFit64 = split::MultiSplitFit<f64>;
/// Double-precision sandwich covariance.
pub type SandwichCovariance64 = split::SandwichCovariance<f64>;
/// Double-precision stacked fit.
pub type StackedFit64 = stacked::StackedFit<f64>;
/// Double-precision equivalence report.
pub type EquivalenceReport64 = stacked::EquivalenceReport<f64>;
