//! Scalar abstraction for the numerical core.
//!
//! Everything in the solver, split engine, and stacked estimator is generic
//! over [`Scalar`] so the same code runs in `f32` or `f64`. The shipped
//! models and the simulation harness instantiate `f64` (see the aliases at
//! the crate root).

use std::fmt::Display;
use std::iter::Sum;

use nalgebra::{DVector, RealField};
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the numerical core is generic over.
///
/// [`nalgebra::RealField`] supplies arithmetic, comparisons, and the
/// transcendental functions; the num-traits bounds supply conversions to and
/// from primitive types. Implemented for every type with those bounds, in
/// particular `f32` and `f64`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Sum + Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: RealField + Copy + FromPrimitive + ToPrimitive + Sum + Display + Send + Sync + 'static
{
}

/// Converts an `f64` constant into `S`, rounding if `S` is narrower.
#[inline]
pub fn real<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("finite f64 constant must convert to a Scalar")
}

/// Converts a scalar to `f64`, widening or rounding as needed.
#[inline]
pub fn to_f64<S: Scalar>(v: S) -> f64 {
    v.to_f64().expect("every Scalar must convert to f64")
}

/// Absolute value, spelled as a function so that no floating-point trait has
/// to be imported at call sites (several in-scope traits define `abs`).
#[inline]
pub fn sabs<S: Scalar>(v: S) -> S {
    if v < S::zero() {
        -v
    } else {
        v
    }
}

/// Larger of two scalars.
#[inline]
pub fn smax<S: Scalar>(a: S, b: S) -> S {
    if a < b {
        b
    } else {
        a
    }
}

/// Infinity norm (largest absolute entry) of a vector; zero for an empty one.
#[inline]
pub fn inf_norm<S: Scalar>(v: &DVector<S>) -> S {
    v.iter().fold(S::zero(), |m, &x| smax(m, sabs(x)))
}

/// True when every entry of the vector is finite.
#[inline]
pub fn all_finite<S: Scalar>(v: &DVector<S>) -> bool {
    v.iter().all(|x| x.is_finite())
}
