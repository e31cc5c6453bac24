//! Small instances with closed-form or structural answers, and a name lookup
//! over every built-in problem.

use nalgebra::{dmatrix, dvector};

use crate::error::{Error, Result};
use crate::problem::{build_problem, CoefficientSet, ControlSet, Dimensions, ProblemInstance};

use super::lqg::LqgSpec;

/// Minimizer of the toy running cost.
pub const TOY_OPTIMUM: f64 = 0.7;

/// `l = 2 (u − 0.7)²` with no dynamics; `J(θ) = 2 (θ − 0.7)² T` for a
/// constant control `θ`.
pub fn quadratic_toy() -> Result<ProblemInstance> {
    let dims = Dimensions::new(1, 0, 1, 1.0)?;
    let coeffs = CoefficientSet::new(dims, dvector![0.0])
        .with_drift_x(|_| dmatrix![0.0])
        .with_drift_u(|_| dmatrix![0.0])
        .with_sigma1_x(|_| dmatrix![0.0])
        .with_sigma1_u(|_| dmatrix![0.0])
        .with_running(|p| 2.0 * (p.u[0] - TOY_OPTIMUM).powi(2))
        .with_running_x(|_| dvector![0.0])
        .with_running_u(|p| dvector![4.0 * (p.u[0] - TOY_OPTIMUM)]);
    build_problem("quadratic_toy", dims, coeffs, ControlSet::unbounded(1))
}

/// Scalar linear-quadratic forward-backward problem with `h = x`:
///
/// ```text
/// dx = (−0.5 x + u) dt + dW + 0.2 dY,       x(0) = 0.5
/// dy = (x − 0.5 y + 0.2 z₁) dt + z₁ dW + z₂ dW^u,   y(T) = x(T)
/// J  = E^u[∫ (x² + u² + 0.5 y²) dt + x(T)²] + E[y(0)²]
/// ```
pub fn lq_scalar() -> Result<ProblemInstance> {
    let dims = Dimensions::new(1, 1, 1, 1.0)?;
    let coeffs = CoefficientSet::new(dims, dvector![0.5])
        .with_drift(|p| dvector![-0.5 * p.x[0] + p.u[0]])
        .with_drift_x(|_| dmatrix![-0.5])
        .with_drift_u(|_| dmatrix![1.0])
        .with_sigma1(|_| dvector![1.0])
        .with_sigma1_x(|_| dmatrix![0.0])
        .with_sigma1_u(|_| dmatrix![0.0])
        .with_sigma2(|_| dvector![0.2])
        .with_sigma2_x(|_| dmatrix![0.0])
        .with_sigma2_u(|_| dmatrix![0.0])
        .with_obs(|p| p.x[0])
        .with_obs_x(|_| dvector![1.0])
        .with_obs_u(|_| dvector![0.0])
        .with_driver(|p| dvector![p.x[0] - 0.5 * p.y[0] + 0.2 * p.z1[0]])
        .with_driver_x(|_| dmatrix![1.0])
        .with_driver_y(|_| dmatrix![-0.5])
        .with_driver_z1(|_| dmatrix![0.2])
        .with_driver_z2(|_| dmatrix![0.0])
        .with_driver_u(|_| dmatrix![0.0])
        .with_terminal(|x| x.clone())
        .with_terminal_x(|_| dmatrix![1.0])
        .with_running(|p| p.x[0].powi(2) + p.u[0].powi(2) + 0.5 * p.y[0].powi(2))
        .with_running_x(|p| dvector![2.0 * p.x[0]])
        .with_running_y(|p| dvector![p.y[0]])
        .with_running_z1(|_| dvector![0.0])
        .with_running_z2(|_| dvector![0.0])
        .with_running_u(|p| dvector![2.0 * p.u[0]])
        .with_terminal_cost(|x| x[0].powi(2))
        .with_terminal_cost_x(|x| dvector![2.0 * x[0]])
        .with_initial_cost(|y| y[0].powi(2))
        .with_initial_cost_y(|y| dvector![2.0 * y[0]]);
    build_problem(
        "lq_scalar",
        dims,
        coeffs,
        ControlSet::symmetric_box(1, 5.0)?,
    )
}

/// `dy = α y dt`, `y(T) = 1`, forward state a Brownian motion, so
/// `y(0) = e^{−αT}`.
pub fn bsde_exponential(alpha: f64, horizon: f64) -> Result<ProblemInstance> {
    let dims = Dimensions::new(1, 1, 1, horizon)?;
    let coeffs = CoefficientSet::new(dims, dvector![0.0])
        .with_sigma1(|_| dvector![1.0])
        .with_driver(move |p| p.y.clone() * alpha)
        .with_driver_y(move |_| dmatrix![alpha])
        .with_terminal(|_| dvector![1.0])
        .with_terminal_x(|_| dmatrix![0.0]);
    build_problem("bsde_exponential", dims, coeffs, ControlSet::unbounded(1))
}

/// Brownian state with `Φ(x) = x²` and nothing else, so the first adjoint
/// is `p(t) = E[2 x(T) | ℱ_t] = 2 x(t)`.
pub fn bsde_martingale() -> Result<ProblemInstance> {
    let dims = Dimensions::new(1, 0, 1, 1.0)?;
    let coeffs = CoefficientSet::new(dims, dvector![0.0])
        .with_drift_x(|_| dmatrix![0.0])
        .with_drift_u(|_| dmatrix![0.0])
        .with_sigma1(|_| dvector![1.0])
        .with_sigma1_x(|_| dmatrix![0.0])
        .with_sigma1_u(|_| dmatrix![0.0])
        .with_obs_x(|_| dvector![0.0])
        .with_obs_u(|_| dvector![0.0])
        .with_running_x(|_| dvector![0.0])
        .with_running_u(|_| dvector![0.0])
        .with_terminal_cost(|x| x[0].powi(2))
        .with_terminal_cost_x(|x| dvector![2.0 * x[0]]);
    build_problem("bsde_martingale", dims, coeffs, ControlSet::unbounded(1))
}

/// Names accepted by [`problem_by_name`].
pub const PROBLEM_NAMES: [&str; 6] = [
    "lqg",
    "lqg_deterministic_h",
    "quadratic_toy",
    "lq_scalar",
    "bsde_exponential",
    "bsde_martingale",
];

/// Built-in problem with default parameters.
pub fn problem_by_name(name: &str) -> Result<ProblemInstance> {
    match name {
        "lqg" => LqgSpec::default().problem(),
        "lqg_deterministic_h" => LqgSpec::deterministic_observation().problem(),
        "quadratic_toy" => quadratic_toy(),
        "lq_scalar" => lq_scalar(),
        "bsde_exponential" => bsde_exponential(1.0, 1.0),
        "bsde_martingale" => bsde_martingale(),
        other => Err(Error::InvalidArgument(format!(
            "unknown problem '{other}', expected one of {}",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::check_gradients;

    #[test]
    fn every_name_builds() {
        for name in PROBLEM_NAMES {
            assert_eq!(problem_by_name(name).unwrap().label, name);
        }
        assert!(problem_by_name("nope").is_err());
    }

    #[test]
    fn lq_scalar_partials_agree_with_differences() {
        let p = lq_scalar().unwrap();
        let report = check_gradients(&p, 200, 1e-4, 1e-6, 5);
        assert!(report.all_pass(), "{report:?}");
    }
}
