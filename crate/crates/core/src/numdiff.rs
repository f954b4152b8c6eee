//! Central-difference numerical differentiation.
//!
//! The per-coordinate step is `h_j = factor * max(1, |x_j|)` with the factor
//! defaulting to the cube root of machine epsilon — the classic balance of
//! truncation against rounding error for central differences.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, real, sabs, smax, Scalar};

/// Default step factor: cube root of machine epsilon for `S`.
pub fn default_step_factor<S: Scalar>() -> S {
    S::default_epsilon().powf(real(1.0 / 3.0))
}

/// Central-difference step for coordinate value `x`: `factor * max(1, |x|)`.
pub fn step_for<S: Scalar>(x: S, factor: S) -> S {
    factor * smax(S::one(), sabs(x))
}

/// Jacobian of `f` at `at` by central differences.
///
/// `f` maps a parameter vector to a `dim_out`-vector and may fail; any
/// failure or non-finite output at a probe point is reported as
/// [`Error::NonFiniteEvaluation`] naming the probe. `step_factor` overrides
/// the default cube-root-of-epsilon factor.
pub fn numerical_jacobian<S, F>(
    f: F,
    at: &DVector<S>,
    dim_out: usize,
    step_factor: Option<S>,
) -> Result<DMatrix<S>>
where
    S: Scalar,
    F: Fn(&DVector<S>) -> Result<DVector<S>>,
{
    let factor = step_factor.unwrap_or_else(default_step_factor::<S>);
    if !(factor > S::zero()) {
        return Err(Error::InvalidArgument(format!(
            "jacobian step factor must be positive, got {factor}"
        )));
    }
    let dim = at.len();
    let mut jac = DMatrix::zeros(dim_out, dim);
    let mut probe = at.clone();
    for j in 0..dim {
        let h = step_for(at[j], factor);
        probe[j] = at[j] + h;
        let plus = eval_probe(&f, &probe, dim_out)?;
        probe[j] = at[j] - h;
        let minus = eval_probe(&f, &probe, dim_out)?;
        probe[j] = at[j];
        let scale = (real::<S>(2.0) * h).recip();
        for r in 0..dim_out {
            jac[(r, j)] = (plus[r] - minus[r]) * scale;
        }
    }
    Ok(jac)
}

fn eval_probe<S, F>(f: &F, probe: &DVector<S>, dim_out: usize) -> Result<DVector<S>>
where
    S: Scalar,
    F: Fn(&DVector<S>) -> Result<DVector<S>>,
{
    let describe = || {
        let coords: Vec<String> = probe.iter().map(|v| v.to_string()).collect();
        format!("probe point [{}]", coords.join(", "))
    };
    let out = f(probe).map_err(|e| match e {
        Error::NonFiniteEvaluation { .. } => Error::NonFiniteEvaluation {
            context: describe(),
        },
        other => other,
    })?;
    if out.len() != dim_out {
        return Err(Error::InvalidArgument(format!(
            "function returned {} outputs, expected {dim_out}",
            out.len()
        )));
    }
    if !all_finite(&out) {
        return Err(Error::NonFiniteEvaluation {
            context: describe(),
        });
    }
    Ok(out)
}
