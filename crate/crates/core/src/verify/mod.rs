//! Independent checks of the Hamiltonian partials, the gradient formula, the cost-difference identity,
//! the perturbation orders and the sufficient-condition hypotheses.

mod calculus;
mod convexity;
mod identity;

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;

pub use calculus::{hamiltonian_gradient_check, CalculusReport};
pub use convexity::{convexity_spotcheck, ConvexityReport};
pub use identity::{cost_identity_check, IdentityReport, IdentityTerm};

use crate::bsde::{solve_backward, RegressionBasis};
use crate::error::{Error, Result};
use crate::filter::{controlled_path_costs, path_costs};
use crate::optimize::{functional_gradient, per_path_gradients, solve_all};
use crate::par;
use crate::policy::ControlPolicy;
use crate::problem::ProblemInstance;
use crate::simulate::{
    fmt_f64, sample_noise, simulate_forward, ControlLaw, NoiseEnsemble, Perturbed, TimeGrid,
};
use crate::stats::{log_log_slope, Estimate};

/// One row of the verification report.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyRow {
    pub check: String,
    pub statistic: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub seed: u64,
}

/// Writes `check,statistic,tolerance,pass,seed`.
pub fn write_report<W: Write>(rows: &[VerifyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "statistic", "tolerance", "pass", "seed"])?;
    for r in rows {
        w.write_record([
            r.check.clone(),
            fmt_f64(r.statistic),
            fmt_f64(r.tolerance),
            r.pass.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// How the `±ε` cost estimates share randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// Shared `(ΔW, ΔY)` under the reference measure; costs are `ρ`-weighted.
    Reference,
    /// Shared `(ΔW, ΔW^u)` under each controlled measure (only for `m = 0`).
    Controlled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub eps: Vec<f64>,
    pub fd: Vec<Estimate>,
    /// Intercept of the least-squares fit `FD(ε) ≈ a + b ε²`.
    pub extrapolated: f64,
    /// Gradient formula applied to the direction.
    pub analytic: Estimate,
    pub coupling: Coupling,
}

impl FdReport {
    pub fn rel_err(&self) -> f64 {
        let scale = self.extrapolated.abs().max(self.analytic.mean.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.extrapolated - self.analytic.mean).abs() / scale
        }
    }
}

/// Per-path costs of a law on fixed noise under the chosen coupling.
pub fn coupled_costs<L: ControlLaw + ?Sized>(
    p: &ProblemInstance,
    law: &L,
    noise: &Arc<NoiseEnsemble>,
    basis: &RegressionBasis,
    coupling: Coupling,
) -> Result<Vec<f64>> {
    match coupling {
        Coupling::Controlled => controlled_path_costs(p, law, noise),
        Coupling::Reference => {
            let ens = simulate_forward(p, law, noise)?;
            let back = solve_backward(p, &ens, basis)?;
            Ok(path_costs(p, &ens, &back))
        }
    }
}

/// Central differences `[J(θ + εδ) − J(θ − εδ)] / 2ε` on common noise for each
/// `ε`, extrapolated to `ε → 0` and set against the gradient formula along
/// `δ`. The controlled coupling is used whenever `m = 0`.
#[allow(clippy::too_many_arguments)]
pub fn fd_directional_derivative(
    p: &ProblemInstance,
    pol: &ControlPolicy,
    dir: &DVector<f64>,
    eps: &[f64],
    grid: TimeGrid,
    paths: usize,
    seed: u64,
    basis: &RegressionBasis,
) -> Result<FdReport> {
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(Error::InvalidArgument("ε values must lie in (0, 1]".into()));
    }
    if dir.len() != pol.param_count() {
        return Err(Error::DimensionMismatch {
            what: "direction".into(),
            expected: pol.param_count(),
            got: dir.len(),
        });
    }
    let coupling = if p.dims.m == 0 {
        Coupling::Controlled
    } else {
        Coupling::Reference
    };
    let noise = Arc::new(sample_noise(grid, paths, seed));

    let s = solve_all(p, pol, &noise, basis)?;
    let g = functional_gradient(p, &s.ens, &s.back, &s.adj)?;
    let along: Vec<f64> = per_path_gradients(pol, &s.ens, &g)
        .iter()
        .map(|v| v.dot(dir))
        .collect();
    let analytic = Estimate::from_samples(&along);

    let mut fd = Vec::with_capacity(eps.len());
    for &e in eps {
        let plus = pol.clone().with_theta(pol.theta() + dir * e)?;
        let minus = pol.clone().with_theta(pol.theta() - dir * e)?;
        let cp = coupled_costs(p, &plus, &noise, basis, coupling)?;
        let cm = coupled_costs(p, &minus, &noise, basis, coupling)?;
        let diff: Vec<f64> = cp
            .iter()
            .zip(&cm)
            .map(|(a, b)| (a - b) / (2.0 * e))
            .collect();
        fd.push(Estimate::from_samples(&diff));
    }
    let means: Vec<f64> = fd.iter().map(|e| e.mean).collect();
    Ok(FdReport {
        eps: eps.to_vec(),
        extrapolated: extrapolate(eps, &means),
        fd,
        analytic,
        coupling,
    })
}

/// Intercept of the least-squares line through `(ε², value)`.
fn extrapolate(eps: &[f64], values: &[f64]) -> f64 {
    if eps.len() < 2 {
        return values[0];
    }
    let xs: Vec<f64> = eps.iter().map(|e| e * e).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = values.iter().sum::<f64>() / n;
    let sxy: f64 = xs
        .iter()
        .zip(values)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        my
    } else {
        my - sxy / sxx * mx
    }
}

/// Sup-norm moments of `(x^ε − x̄, y^ε − ȳ, ρ^ε − ρ̄)` at one `ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationMoments {
    pub eps: f64,
    /// `E[sup_t |x^ε − x̄|⁴]`
    pub x4: f64,
    /// `E[sup_t |y^ε − ȳ|⁴]`, zero when `m = 0`
    pub y4: f64,
    /// `E[sup_t |ρ^ε − ρ̄|²]`
    pub rho2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationReport {
    pub moments: Vec<PerturbationMoments>,
    pub x_slope: f64,
    /// `None` when `m = 0`.
    pub y_slope: Option<f64>,
    pub rho_slope: f64,
}

/// Moments for `u^ε = ū + ε(u − ū)` against `ū` on common noise.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_moments<A: ControlLaw + ?Sized, B: ControlLaw + ?Sized>(
    p: &ProblemInstance,
    pol_bar: &A,
    pol_u: &B,
    eps: f64,
    noise: &Arc<NoiseEnsemble>,
    basis: &RegressionBasis,
) -> Result<PerturbationMoments> {
    let bar = simulate_forward(p, pol_bar, noise)?;
    let law = Perturbed {
        base: pol_bar,
        target: pol_u,
        eps,
    };
    let per = simulate_forward(p, &law, noise)?;
    let m = p.dims.m;
    let (bar_back, per_back) = if m > 0 {
        (
            Some(solve_backward(p, &bar, basis)?),
            Some(solve_backward(p, &per, basis)?),
        )
    } else {
        (None, None)
    };
    let steps = bar.grid().steps();
    let rows: Vec<[f64; 3]> = par::map_paths(bar.paths(), |i| {
        let (mut sx, mut sy, mut sr) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..=steps {
            let dx = bar
                .x(i, j)
                .iter()
                .zip(per.x(i, j))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            sx = sx.max(dx.sqrt());
            sr = sr.max((bar.rho(i, j) - per.rho(i, j)).abs());
            if let (Some(bb), Some(pb)) = (&bar_back, &per_back) {
                let dy = bb
                    .y(i, j)
                    .iter()
                    .zip(pb.y(i, j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>();
                sy = sy.max(dy.sqrt());
            }
        }
        [sx.powi(4), sy.powi(4), sr * sr]
    });
    let n = rows.len() as f64;
    let mean = |c: usize| rows.iter().map(|r| r[c]).sum::<f64>() / n;
    Ok(PerturbationMoments {
        eps,
        x4: mean(0),
        y4: mean(1),
        rho2: mean(2),
    })
}

/// Log-log slopes of the sup-norm moments over at least three `ε`.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_order_check<A: ControlLaw + ?Sized, B: ControlLaw + ?Sized>(
    p: &ProblemInstance,
    pol_bar: &A,
    pol_u: &B,
    eps: &[f64],
    grid: TimeGrid,
    paths: usize,
    seed: u64,
    basis: &RegressionBasis,
) -> Result<PerturbationReport> {
    if eps.len() < 3 || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument(
            "need at least three positive ε values".into(),
        ));
    }
    let noise = Arc::new(sample_noise(grid, paths, seed));
    let moments = eps
        .iter()
        .map(|&e| perturbation_moments(p, pol_bar, pol_u, e, &noise, basis))
        .collect::<Result<Vec<_>>>()?;
    let slope = |f: fn(&PerturbationMoments) -> f64| {
        let ys: Vec<f64> = moments.iter().map(f).collect();
        log_log_slope(eps, &ys)
    };
    Ok(PerturbationReport {
        x_slope: slope(|m| m.x4),
        y_slope: (p.dims.m > 0).then(|| slope(|m| m.y4)),
        rho_slope: slope(|m| m.rho2),
        moments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::ObservationFeatureMap;
    use crate::problem::{build_problem, CoefficientSet, ControlSet, Dimensions};
    use crate::simulate::ConstantControl;
    use nalgebra::{dmatrix, dvector};

    fn toy() -> (ProblemInstance, ControlPolicy) {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.0])
            .with_drift_x(|_| dmatrix![0.0])
            .with_drift_u(|_| dmatrix![0.0])
            .with_sigma1_x(|_| dmatrix![0.0])
            .with_sigma1_u(|_| dmatrix![0.0])
            .with_running(|p| 2.0 * (p.u[0] - 0.7).powi(2))
            .with_running_x(|_| dvector![0.0])
            .with_running_u(|p| dvector![4.0 * (p.u[0] - 0.7)]);
        let p = build_problem("toy", dims, coeffs, ControlSet::unbounded(1)).unwrap();
        let pol = ControlPolicy::zero(
            ObservationFeatureMap::new(vec![], 0).unwrap(),
            ControlSet::unbounded(1),
        );
        (p, pol)
    }

    #[test]
    fn zero_direction_gives_zero_difference() {
        let (p, pol) = toy();
        let grid = TimeGrid::new(8, 1.0).unwrap();
        let r = fd_directional_derivative(
            &p,
            &pol,
            &dvector![0.0],
            &[0.1, 0.05],
            grid,
            50,
            1,
            &Default::default(),
        )
        .unwrap();
        assert!(r.fd.iter().all(|e| e.mean == 0.0));
        assert_eq!(r.rel_err(), 0.0);
    }

    #[test]
    fn toy_difference_matches_closed_form() {
        let (p, pol) = toy();
        let pol = pol.with_theta(dvector![0.2]).unwrap();
        let grid = TimeGrid::new(8, 1.0).unwrap();
        let r = fd_directional_derivative(
            &p,
            &pol,
            &dvector![1.0],
            &[1e-3],
            grid,
            50,
            1,
            &Default::default(),
        )
        .unwrap();
        let exact = 4.0 * (0.2 - 0.7);
        assert!((r.fd[0].mean - exact).abs() < 1e-6);
        assert!((r.analytic.mean - exact).abs() < 1e-10);
    }

    #[test]
    fn toy_fd_error_shrinks_with_eps() {
        // J is exactly quadratic, so central differences are exact up to rounding
        let (p, pol) = toy();
        let pol = pol.with_theta(dvector![0.2]).unwrap();
        let grid = TimeGrid::new(8, 1.0).unwrap();
        let r = fd_directional_derivative(
            &p,
            &pol,
            &dvector![1.0],
            &[0.4, 0.2, 0.1],
            grid,
            20,
            1,
            &Default::default(),
        )
        .unwrap();
        let errs: Vec<f64> = r.fd.iter().map(|e| (e.mean + 2.0).abs()).collect();
        assert!(errs.iter().all(|e| *e < 1e-12));
    }

    #[test]
    fn extrapolation_removes_quadratic_term() {
        let eps = [0.2, 0.1, 0.05];
        let vals: Vec<f64> = eps.iter().map(|e| 1.5 + 3.0 * e * e).collect();
        assert!((extrapolate(&eps, &vals) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_eps_moments_vanish() {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.0])
            .with_drift(|p| dvector![p.u[0]])
            .with_sigma1(|_| dvector![1.0])
            .with_obs(|p| p.x[0]);
        let p = build_problem("lin", dims, coeffs, ControlSet::unbounded(1)).unwrap();
        let noise = Arc::new(sample_noise(TimeGrid::new(8, 1.0).unwrap(), 100, 3));
        let m = perturbation_moments(
            &p,
            &ConstantControl(dvector![0.0]),
            &ConstantControl(dvector![1.0]),
            0.0,
            &noise,
            &Default::default(),
        )
        .unwrap();
        assert_eq!((m.x4, m.y4, m.rho2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn report_schema() {
        let rows = [VerifyRow {
            check: "c".into(),
            statistic: 0.5,
            tolerance: 1.0,
            pass: true,
            seed: 9,
        }];
        let mut buf = Vec::new();
        write_report(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("check,statistic,tolerance,pass,seed\n"));
        assert!(text.contains("c,5.0000000000000000e-1,1.0000000000000000e0,true,9"));
    }
}
