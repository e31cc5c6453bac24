//! Term-by-term Monte Carlo check of the cost-difference identity
//!
//! ```text
//! J(u) − J(ū) = E^ū ∫ [H^u − H̄ − ⟨H̄_x, Δx⟩ − ⟨H̄_y, Δy⟩ − ⟨H̄_z₁, Δz₁⟩ − ⟨H̄_z₂, Δz₂⟩
//!                      − ⟨Δσ₂ Δh, p̄⟩ − ⟨Δz₂ Δh, k̄⟩] dt
//!             + E^ū[ΔΦ − ⟨Δx(T), Φ̄_x⟩] − E^ū[⟨Δφ, k̄(T)⟩ − ⟨φ̄_xᵀ k̄(T), Δx(T)⟩]
//!             + E[Δγ − ⟨Δy(0), γ̄_y⟩]
//!             + E ∫ R̄₂ Δρ Δh dt + E ∫ Δl Δρ dt + E[Δρ(T) ΔΦ]
//! ```
//!
//! where `Δ` is the `u`-value minus the `ū`-value, `H^u` is evaluated at the
//! `u`-state with the `ū`-adjoints, and every `E^ū` is a `ρ̄`-weighted mean.
//! On the grid the adjoint `p̄` inside the integrals is the one-step
//! predictor, which removes most of the O(dt) mismatch between the sides.

use std::sync::Arc;

use nalgebra::DVector;

use crate::bsde::{solve_backward, RegressionBasis};
use crate::error::Result;
use crate::filter::path_costs;
use crate::hamiltonian::{eval_h, grad_h, HamiltonianPoint, Wrt};
use crate::optimize::solve_all;
use crate::par;
use crate::problem::ProblemInstance;
use crate::simulate::{sample_noise, simulate_forward, ControlLaw, TimeGrid};
use crate::stats::Estimate;

/// Term names in the order they are reported.
pub const TERM_NAMES: [&str; 13] = [
    "hamiltonian_difference",
    "linearization_x",
    "linearization_y",
    "linearization_z1",
    "linearization_z2",
    "cross_sigma2_h",
    "cross_z2_h",
    "terminal_cost_remainder",
    "terminal_map_remainder",
    "initial_cost_remainder",
    "density_r2_h",
    "density_running",
    "density_terminal",
];

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityTerm {
    pub name: &'static str,
    pub value: Estimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub terms: Vec<IdentityTerm>,
    /// Standard error of the per-path difference `LHS − RHS`.
    pub combined_se: f64,
    /// `(LHS − RHS) / combined_se`, zero when both vanish.
    pub z: f64,
}

impl IdentityReport {
    pub fn gap(&self) -> f64 {
        (self.lhs.mean - self.rhs.mean).abs()
    }

    /// `max(3 · combined SE, rel · |LHS|)`
    pub fn tolerance(&self, rel: f64) -> f64 {
        (3.0 * self.combined_se).max(rel * self.lhs.mean.abs())
    }

    pub fn passes(&self, rel: f64) -> bool {
        self.gap() <= self.tolerance(rel)
    }
}

fn dot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b)
}

/// Both sides of the identity on shared noise, with `ū`-adjoints.
#[allow(clippy::too_many_arguments)]
pub fn cost_identity_check<A: ControlLaw + ?Sized, B: ControlLaw + ?Sized>(
    p: &ProblemInstance,
    pol_u: &A,
    pol_bar: &B,
    grid: TimeGrid,
    paths: usize,
    seed: u64,
    basis: &RegressionBasis,
) -> Result<IdentityReport> {
    let noise = Arc::new(sample_noise(grid, paths, seed));
    let bar = solve_all(p, pol_bar, &noise, basis)?;
    let u_ens = simulate_forward(p, pol_u, &noise)?;
    let u_back = solve_backward(p, &u_ens, basis)?;
    let lhs_paths: Vec<f64> = path_costs(p, &u_ens, &u_back)
        .iter()
        .zip(path_costs(p, &bar.ens, &bar.back))
        .map(|(a, b)| a - b)
        .collect();

    let steps = grid.steps();
    let dt = grid.dt();
    let m = p.dims.m;
    let c = &p.coeffs;
    let per_path: Vec<Result<[f64; 13]>> = par::map_paths(paths, |i| {
        let mut t = [0.0; 13];
        for j in 0..steps {
            let hb: HamiltonianPoint = bar.adj.control_point(p, &bar.ens, &bar.back, i, j);
            let mut hu = hb.clone();
            hu.point = u_back.point(&u_ens, i, j);
            let (pb, pu) = (&hb.point, &hu.point);
            let rho_b = bar.ens.rho(i, j);
            let rho_u = u_ens.rho(i, j);
            let w = rho_b * dt;
            let dh = u_ens.h(i, j) - bar.ens.h(i, j);

            t[0] += w * (eval_h(&hu, c) - eval_h(&hb, c));
            t[1] -= w * dot(&grad_h(&hb, c, Wrt::X)?, &(&pu.x - &pb.x));
            if m > 0 {
                t[2] -= w * dot(&grad_h(&hb, c, Wrt::Y)?, &(&pu.y - &pb.y));
                t[3] -= w * dot(&grad_h(&hb, c, Wrt::Z1)?, &(&pu.z1 - &pb.z1));
                t[4] -= w * dot(&grad_h(&hb, c, Wrt::Z2)?, &(&pu.z2 - &pb.z2));
                t[6] -= w * dot(&((&pu.z2 - &pb.z2) * dh), &hb.k);
            }
            t[5] -= w * dot(&((c.sigma2(pu) - c.sigma2(pb)) * dh), &hb.p);
            t[10] += bar.adj.r2(i, j) * (rho_u - rho_b) * dh * dt;
            t[11] += (c.running(pu) - c.running(pb)) * (rho_u - rho_b) * dt;
        }
        let xb = bar.ens.x_vec(i, steps);
        let xu = u_ens.x_vec(i, steps);
        let dx = &xu - &xb;
        let rho_b = bar.ens.rho(i, steps);
        let rho_u = u_ens.rho(i, steps);
        let d_phi_cost = c.terminal_cost(&xu) - c.terminal_cost(&xb);
        t[7] = rho_b * (d_phi_cost - dot(&dx, &c.terminal_cost_x(&xb)?));
        if m > 0 {
            let kb = DVector::from_column_slice(bar.adj.k(i, steps));
            let d_phi = c.terminal(&xu) - c.terminal(&xb);
            t[8] = -rho_b * (dot(&d_phi, &kb) - dot(&c.terminal_x(&xb)?.tr_mul(&kb), &dx));
            let yb = DVector::from_column_slice(bar.back.y(i, 0));
            let yu = DVector::from_column_slice(u_back.y(i, 0));
            t[9] = c.initial_cost(&yu)
                - c.initial_cost(&yb)
                - dot(&(&yu - &yb), &c.initial_cost_y(&yb)?);
        }
        t[12] = (rho_u - rho_b) * d_phi_cost;
        Ok(t)
    });
    let per_path = per_path.into_iter().collect::<Result<Vec<_>>>()?;

    let rhs_paths: Vec<f64> = per_path.iter().map(|t| t.iter().sum()).collect();
    let terms = TERM_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| IdentityTerm {
            name,
            value: Estimate::from_samples(&per_path.iter().map(|t| t[k]).collect::<Vec<_>>()),
        })
        .collect();
    let diff: Vec<f64> = lhs_paths
        .iter()
        .zip(&rhs_paths)
        .map(|(a, b)| a - b)
        .collect();
    let d = Estimate::from_samples(&diff);
    Ok(IdentityReport {
        lhs: Estimate::from_samples(&lhs_paths),
        rhs: Estimate::from_samples(&rhs_paths),
        terms,
        combined_se: d.se,
        z: if d.se > 0.0 {
            d.mean / d.se
        } else if d.mean == 0.0 {
            0.0
        } else {
            d.mean.signum() * f64::INFINITY
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_problem, CoefficientSet, ControlSet, Dimensions};
    use crate::simulate::ConstantControl;
    use nalgebra::{dmatrix, dvector};

    fn zero_problem() -> ProblemInstance {
        let dims = Dimensions::new(1, 1, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.0])
            .with_sigma1(|_| dvector![1.0])
            .with_drift_x(|_| dmatrix![0.0])
            .with_drift_u(|_| dmatrix![0.0])
            .with_sigma1_x(|_| dmatrix![0.0])
            .with_sigma1_u(|_| dmatrix![0.0])
            .with_sigma2_x(|_| dmatrix![0.0])
            .with_sigma2_u(|_| dmatrix![0.0])
            .with_obs_x(|_| dvector![0.0])
            .with_obs_u(|_| dvector![0.0])
            .with_driver_x(|_| dmatrix![0.0])
            .with_driver_y(|_| dmatrix![0.0])
            .with_driver_z1(|_| dmatrix![0.0])
            .with_driver_z2(|_| dmatrix![0.0])
            .with_driver_u(|_| dmatrix![0.0])
            .with_terminal_x(|_| dmatrix![0.0])
            .with_running_x(|_| dvector![0.0])
            .with_running_y(|_| dvector![0.0])
            .with_running_z1(|_| dvector![0.0])
            .with_running_z2(|_| dvector![0.0])
            .with_running_u(|_| dvector![0.0])
            .with_terminal_cost_x(|_| dvector![0.0])
            .with_initial_cost_y(|_| dvector![0.0]);
        build_problem("zero", dims, coeffs, ControlSet::unbounded(1)).unwrap()
    }

    #[test]
    fn zero_problem_has_zero_terms() {
        let p = zero_problem();
        let grid = TimeGrid::new(8, 1.0).unwrap();
        let r = cost_identity_check(
            &p,
            &ConstantControl(dvector![1.0]),
            &ConstantControl(dvector![-0.5]),
            grid,
            200,
            4,
            &RegressionBasis::default(),
        )
        .unwrap();
        assert_eq!(r.terms.len(), 13);
        for t in &r.terms {
            assert_eq!(t.value.mean, 0.0, "{}", t.name);
        }
        assert_eq!((r.lhs.mean, r.rhs.mean, r.z), (0.0, 0.0, 0.0));
    }

    #[test]
    fn identical_policies_give_identical_sides() {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.5])
            .with_drift(|p| dvector![p.u[0] - p.x[0]])
            .with_drift_x(|_| dmatrix![-1.0])
            .with_drift_u(|_| dmatrix![1.0])
            .with_sigma1(|_| dvector![1.0])
            .with_sigma1_x(|_| dmatrix![0.0])
            .with_sigma1_u(|_| dmatrix![0.0])
            .with_obs(|p| p.x[0])
            .with_obs_x(|_| dvector![1.0])
            .with_obs_u(|_| dvector![0.0])
            .with_running(|p| p.x[0] * p.x[0] + p.u[0] * p.u[0])
            .with_running_x(|p| dvector![2.0 * p.x[0]])
            .with_running_u(|p| dvector![2.0 * p.u[0]])
            .with_terminal_cost(|x| x[0] * x[0])
            .with_terminal_cost_x(|x| dvector![2.0 * x[0]]);
        let p = build_problem("lq", dims, coeffs, ControlSet::unbounded(1)).unwrap();
        let law = ConstantControl(dvector![0.3]);
        let grid = TimeGrid::new(8, 1.0).unwrap();
        let r =
            cost_identity_check(&p, &law, &law, grid, 300, 2, &RegressionBasis::default()).unwrap();
        assert_eq!(r.lhs.mean, 0.0);
        assert_eq!(r.rhs.mean, 0.0);
        assert!(r.passes(0.05));
    }
}
