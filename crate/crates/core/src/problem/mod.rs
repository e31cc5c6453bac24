//! Control problem instances: dimensions, coefficient evaluators, the control
//! set and the probing/validation that ties them together.

mod coeffs;
mod control_set;
mod gradcheck;

use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::DVector;

use crate::error::{Error, Result};

pub use coeffs::{
    CoefficientSet, MatFn, Partial, ScalarFn, TermMatFn, TermScalarFn, TermVecFn, VecFn,
};
pub use control_set::ControlSet;
pub use gradcheck::{check_gradients, BoundCheck, GradientCheckReport, PartialCheck};

/// Problem dimensions. `m = 0` switches off the backward component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dimensions {
    /// State dimension.
    pub n: usize,
    /// Backward dimension (y, z1, z2).
    pub m: usize,
    /// Control dimension.
    pub k: usize,
    /// Horizon `T`.
    pub horizon: f64,
}

impl Dimensions {
    pub fn new(n: usize, m: usize, k: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimensions(
                "state dimension n must be >= 1".into(),
            ));
        }
        if k == 0 {
            return Err(Error::InvalidDimensions(
                "control dimension k must be >= 1".into(),
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidDimensions(format!(
                "horizon must be > 0, got {horizon}"
            )));
        }
        Ok(Self { n, m, k, horizon })
    }
}

/// Argument bundle `(t, x, y, z1, z2, u)` passed to every running evaluator.
///
/// Evaluators that do not depend on some argument (e.g. `b` on `y`) simply
/// ignore it.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z1: DVector<f64>,
    pub z2: DVector<f64>,
    pub u: DVector<f64>,
}

impl Point {
    pub fn zeros(dims: &Dimensions) -> Self {
        Self {
            t: 0.0,
            x: DVector::zeros(dims.n),
            y: DVector::zeros(dims.m),
            z1: DVector::zeros(dims.m),
            z2: DVector::zeros(dims.m),
            u: DVector::zeros(dims.k),
        }
    }
}

/// A validated problem instance.
#[derive(Clone)]
pub struct ProblemInstance {
    pub label: String,
    pub dims: Dimensions,
    pub coeffs: CoefficientSet,
    pub control_set: ControlSet,
}

impl std::fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("label", &self.label)
            .field("dims", &self.dims)
            .field("control_set", &self.control_set)
            .finish_non_exhaustive()
    }
}

/// Validates the coefficient set against `dims` by probing every evaluator once
/// at `(t = 0, x = x0, y = 0, z = 0, u = project(0))`.
pub fn build_problem(
    label: impl Into<String>,
    dims: Dimensions,
    coeffs: CoefficientSet,
    control_set: ControlSet,
) -> Result<ProblemInstance> {
    if coeffs.dims() != &dims {
        return Err(Error::InvalidDimensions(format!(
            "coefficient set was declared for {:?}, problem uses {:?}",
            coeffs.dims(),
            dims
        )));
    }
    if control_set.dim() != dims.k {
        return Err(Error::DimensionMismatch {
            what: "control set".into(),
            expected: dims.k,
            got: control_set.dim(),
        });
    }
    if dims.m == 0 {
        for name in ["f", "phi", "gamma"] {
            if coeffs.is_supplied(name) {
                return Err(Error::DimensionMismatch {
                    what: format!("{name} supplied while m = 0"),
                    expected: 0,
                    got: 1,
                });
            }
        }
    }
    if coeffs.x0().len() != dims.n {
        return Err(Error::DimensionMismatch {
            what: "x0".into(),
            expected: dims.n,
            got: coeffs.x0().len(),
        });
    }

    let mut pt = Point::zeros(&dims);
    pt.x.copy_from(coeffs.x0());
    pt.u = control_set.project(&DVector::zeros(dims.k));

    for base in coeffs::ALL_FUNCTIONS {
        let name = base.name();
        let value = probe(name, || coeffs.eval_base(base, &pt))?;
        check_shape(name, base.output_dim(&dims), value.len())?;
        check_finite(name, value.iter())?;
    }
    for partial in Partial::ALL {
        if !coeffs.has_partial(partial) {
            continue;
        }
        let (rows, cols) = partial.shape(&dims);
        let jac = probe(partial.name(), || coeffs.eval_partial(partial, &pt))??;
        check_shape(partial.name(), rows, jac.nrows())?;
        check_shape(partial.name(), cols, jac.ncols())?;
        check_finite(partial.name(), jac.iter())?;
    }

    Ok(ProblemInstance {
        label: label.into(),
        dims,
        coeffs,
        control_set,
    })
}

fn probe<T>(name: &str, f: impl FnOnce() -> T) -> Result<T> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|payload| {
        let message = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".to_string());
        Error::EvaluatorFailure {
            what: name.to_string(),
            message,
        }
    })
}

fn check_shape(name: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what: name.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}

fn check_finite<'a>(name: &str, mut values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if values.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::EvaluatorFailure {
            what: name.to_string(),
            message: "non-finite output".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn scalar_lq() -> (Dimensions, CoefficientSet) {
        let dims = Dimensions::new(1, 1, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![1.0])
            .with_drift(|p| dvector![p.x[0] + p.u[0]])
            .with_driver(|p| dvector![0.5 * p.y[0]])
            .with_terminal(|x| x.clone())
            .with_running(|p| p.u[0] * p.u[0]);
        (dims, coeffs)
    }

    #[test]
    fn scalar_instance_builds() {
        let (dims, coeffs) = scalar_lq();
        let p = build_problem("scalar", dims, coeffs, ControlSet::unbounded(1)).unwrap();
        assert_eq!(p.dims.n, 1);
    }

    #[test]
    fn drift_of_wrong_length_is_rejected() {
        let (dims, coeffs) = scalar_lq();
        let coeffs = coeffs.with_drift(|p| dvector![p.x[0], 0.0]);
        let err = build_problem("bad", dims, coeffs, ControlSet::unbounded(1)).unwrap_err();
        assert!(
            matches!(err, Error::DimensionMismatch { ref what, expected: 1, got: 2 } if what == "b")
        );
    }

    #[test]
    fn driver_without_backward_dimension_is_rejected() {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.0]).with_driver(|_| dvector![1.0]);
        let err = build_problem("bad", dims, coeffs, ControlSet::unbounded(1)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn panicking_evaluator_is_reported() {
        let (dims, coeffs) = scalar_lq();
        let coeffs = coeffs.with_obs(|_| panic!("boom"));
        let err = build_problem("bad", dims, coeffs, ControlSet::unbounded(1)).unwrap_err();
        assert!(matches!(err, Error::EvaluatorFailure { ref what, .. } if what == "h"));
    }

    #[test]
    fn invalid_dimensions() {
        assert!(Dimensions::new(0, 0, 1, 1.0).is_err());
        assert!(Dimensions::new(1, 0, 0, 1.0).is_err());
        assert!(Dimensions::new(1, 0, 1, 0.0).is_err());
    }
}
