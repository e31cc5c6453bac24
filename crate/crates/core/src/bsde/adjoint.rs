use nalgebra::DVector;

use super::{fit_step, regression_state, BackwardEnsemble, RegressionBasis, Regressor};
use crate::error::{Error, Result};
use crate::hamiltonian::{grad_h, shifted_r2, HamiltonianPoint, Wrt};
use crate::par;
use crate::problem::ProblemInstance;
use crate::simulate::PathEnsemble;

/// Adjoint processes along an ensemble.
///
/// `k` runs forward from `k(0) = −γ_y(y(0))`; `r` and `p` run backward from
/// `r(T) = Φ(x(T))` and `p(T) = Φ_x(x(T)) − φ_xᵀ(x(T)) k(T)`.
#[derive(Clone, Debug)]
pub struct AdjointEnsemble {
    n: usize,
    m: usize,
    steps: usize,
    /// `(path, step ≤ N, component)`
    p: Vec<f64>,
    /// `(path, step < N, component)`: one-step predictor `E[ρ_{j+1}/ρ_j · p_{j+1} | F_j]`
    p_pred: Vec<f64>,
    q1: Vec<f64>,
    q2: Vec<f64>,
    /// `(path, step ≤ N, component)`
    k: Vec<f64>,
    /// `(path, step ≤ N)`
    r: Vec<f64>,
    /// `(path, step < N)`
    r1: Vec<f64>,
    r2: Vec<f64>,
}

impl AdjointEnsemble {
    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn backward_dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn p(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * (self.steps + 1) + step) * self.n;
        &self.p[off..off + self.n]
    }

    /// `E[p_{j+1} | F_j] + q₂ h dt`, the first-order estimate of
    /// `E[ρ_{j+1}/ρ_j · p_{j+1} | F_j]`.
    #[inline]
    pub fn p_pred(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * self.steps + step) * self.n;
        &self.p_pred[off..off + self.n]
    }

    #[inline]
    pub fn q1(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * self.steps + step) * self.n;
        &self.q1[off..off + self.n]
    }

    #[inline]
    pub fn q2(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * self.steps + step) * self.n;
        &self.q2[off..off + self.n]
    }

    #[inline]
    pub fn k(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * (self.steps + 1) + step) * self.m;
        &self.k[off..off + self.m]
    }

    #[inline]
    pub fn r(&self, path: usize, step: usize) -> f64 {
        self.r[path * (self.steps + 1) + step]
    }

    #[inline]
    pub fn r1(&self, path: usize, step: usize) -> f64 {
        self.r1[path * self.steps + step]
    }

    #[inline]
    pub fn r2(&self, path: usize, step: usize) -> f64 {
        self.r2[path * self.steps + step]
    }

    /// Hamiltonian point at `(path, step < N)` with `R₂eff` formed from the
    /// stored `R₂`, `p`, `k` and the forward/backward values.
    pub fn hamiltonian_point(
        &self,
        p: &ProblemInstance,
        ens: &PathEnsemble,
        back: &BackwardEnsemble,
        path: usize,
        step: usize,
    ) -> HamiltonianPoint {
        self.point_with(p, ens, back, path, step, self.p(path, step))
    }

    /// As [`AdjointEnsemble::hamiltonian_point`] with `p` replaced by its
    /// one-step predictor. `H_u` there is the exact derivative of the
    /// discretized cost with respect to `u_j`, up to regression error.
    pub fn control_point(
        &self,
        p: &ProblemInstance,
        ens: &PathEnsemble,
        back: &BackwardEnsemble,
        path: usize,
        step: usize,
    ) -> HamiltonianPoint {
        self.point_with(p, ens, back, path, step, self.p_pred(path, step))
    }

    fn point_with(
        &self,
        p: &ProblemInstance,
        ens: &PathEnsemble,
        back: &BackwardEnsemble,
        path: usize,
        step: usize,
        pv: &[f64],
    ) -> HamiltonianPoint {
        let point = back.point(ens, path, step);
        let pv = DVector::from_column_slice(pv);
        let kv = DVector::from_column_slice(self.k(path, step));
        let r2_eff = shifted_r2(
            self.r2(path, step),
            &p.coeffs.sigma2(&point),
            &pv,
            &point.z2,
            &kv,
        );
        HamiltonianPoint {
            p: pv,
            q1: DVector::from_column_slice(self.q1(path, step)),
            q2: DVector::from_column_slice(self.q2(path, step)),
            k: kv,
            r2_eff,
            point,
        }
    }
}

fn nonfinite(what: &'static str, path: usize, step: usize) -> Error {
    Error::NonFinite { what, path, step }
}

/// Solves the adjoint system in the order `k` (forward), then `r` and `p`
/// (backward, sharing one regression per step).
pub fn solve_adjoint(
    p: &ProblemInstance,
    ens: &PathEnsemble,
    back: &BackwardEnsemble,
    basis: &RegressionBasis,
) -> Result<AdjointEnsemble> {
    let dims = p.dims;
    let (n, m) = (dims.n, dims.m);
    let steps = ens.grid().steps();
    let paths = ens.paths();
    let dt = ens.grid().dt();
    if back.dim() != m || back.paths() != paths {
        return Err(Error::DimensionMismatch {
            what: "backward ensemble".into(),
            expected: m,
            got: back.dim(),
        });
    }

    // k forward
    let k_paths: Vec<Result<Vec<f64>>> = par::map_paths(paths, |i| {
        let mut out = Vec::with_capacity((steps + 1) * m);
        if m == 0 {
            return Ok(out);
        }
        let y0 = DVector::from_column_slice(back.y(i, 0));
        let mut k = -p.coeffs.initial_cost_y(&y0)?;
        out.extend_from_slice(k.as_slice());
        for j in 0..steps {
            let mut hp = HamiltonianPoint::without_adjoints(back.point(ens, i, j));
            hp.k = k.clone();
            let hy = grad_h(&hp, &p.coeffs, Wrt::Y)?;
            let hz1 = grad_h(&hp, &p.coeffs, Wrt::Z1)?;
            let hz2 = grad_h(&hp, &p.coeffs, Wrt::Z2)?;
            let innovation = ens.innovation(i, j);
            k = k - hy * dt - hz1 * ens.dw(i, j) - hz2 * innovation;
            if k.iter().any(|v| !v.is_finite()) {
                return Err(nonfinite("adjoint k", i, j + 1));
            }
            out.extend_from_slice(k.as_slice());
        }
        Ok(out)
    });
    let mut k_all = Vec::with_capacity(paths * (steps + 1) * m);
    for kp in k_paths {
        k_all.extend_from_slice(&kp?);
    }

    let mut adj = AdjointEnsemble {
        n,
        m,
        steps,
        p: vec![0.0; paths * (steps + 1) * n],
        p_pred: vec![0.0; paths * steps * n],
        q1: vec![0.0; paths * steps * n],
        q2: vec![0.0; paths * steps * n],
        k: k_all,
        r: vec![0.0; paths * (steps + 1)],
        r1: vec![0.0; paths * steps],
        r2: vec![0.0; paths * steps],
    };

    // terminal values of r and p
    let terminal: Vec<Result<(f64, Vec<f64>)>> = par::map_paths(paths, |i| {
        let x = ens.x_vec(i, steps);
        let r = p.coeffs.terminal_cost(&x);
        let mut pt = p.coeffs.terminal_cost_x(&x)?;
        if m > 0 {
            let kv = DVector::from_column_slice(adj.k(i, steps));
            pt -= p.coeffs.terminal_x(&x)?.tr_mul(&kv);
        }
        Ok((r, pt.as_slice().to_vec()))
    });
    for (i, t) in terminal.into_iter().enumerate() {
        let (r, pv) = t?;
        adj.r[i * (steps + 1) + steps] = r;
        let off = (i * (steps + 1) + steps) * n;
        adj.p[off..off + n].copy_from_slice(&pv);
    }

    for j in (0..steps).rev() {
        let (vars, dim) = regression_state(ens, j, &basis.obs_lags);
        let reg = Regressor::polynomial(&vars, dim, basis.degree, basis.ridge, j)?;

        // r stage
        let next_r: Vec<f64> = (0..paths).map(|i| adj.r(i, j + 1)).collect();
        let fit_r = fit_step(&reg, ens, j, &next_r);
        let running: Vec<f64> = par::map_paths(paths, |i| p.coeffs.running(&back.point(ens, i, j)));
        for i in 0..paths {
            let h = ens.h(i, j);
            let rj = fit_r.cont[i] + (running[i] + fit_r.dy[i] * h) * dt;
            if !rj.is_finite() {
                return Err(nonfinite("adjoint r", i, j));
            }
            adj.r[i * (steps + 1) + j] = rj;
            adj.r1[i * steps + j] = fit_r.dw[i];
            adj.r2[i * steps + j] = fit_r.dy[i];
        }

        // p stage
        let mut cont = vec![0.0; paths * n];
        for c in 0..n {
            let next: Vec<f64> = (0..paths).map(|i| adj.p(i, j + 1)[c]).collect();
            let fit = fit_step(&reg, ens, j, &next);
            for i in 0..paths {
                cont[i * n + c] = fit.cont[i];
                adj.q1[(i * steps + j) * n + c] = fit.dw[i];
                adj.q2[(i * steps + j) * n + c] = fit.dy[i];
            }
        }
        let values: Vec<Result<(Vec<f64>, Vec<f64>)>> = par::map_paths(paths, |i| {
            let point = back.point(ens, i, j);
            let pv = DVector::from_column_slice(&cont[i * n..(i + 1) * n]);
            let kv = DVector::from_column_slice(adj.k(i, j));
            let r2_eff = shifted_r2(adj.r2(i, j), &p.coeffs.sigma2(&point), &pv, &point.z2, &kv);
            let hp = HamiltonianPoint {
                p: pv,
                q1: DVector::from_column_slice(adj.q1(i, j)),
                q2: DVector::from_column_slice(adj.q2(i, j)),
                k: kv,
                r2_eff,
                point,
            };
            let hx = grad_h(&hp, &p.coeffs, Wrt::X)?;
            let pred = &hp.p + &hp.q2 * (ens.h(i, j) * dt);
            let pj = &pred + hx * dt;
            if pj.iter().any(|v| !v.is_finite()) {
                return Err(nonfinite("adjoint p", i, j));
            }
            Ok((pj.as_slice().to_vec(), pred.as_slice().to_vec()))
        });
        for (i, v) in values.into_iter().enumerate() {
            let (pj, pred) = v?;
            let off = (i * (steps + 1) + j) * n;
            adj.p[off..off + n].copy_from_slice(&pj);
            let off = (i * steps + j) * n;
            adj.p_pred[off..off + n].copy_from_slice(&pred);
        }
    }
    Ok(adj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::solve_backward;
    use crate::problem::{build_problem, CoefficientSet, ControlSet, Dimensions};
    use crate::simulate::{sample_noise, simulate_forward, ConstantControl, TimeGrid};
    use nalgebra::{dmatrix, dvector};
    use std::sync::Arc;

    fn solve(
        p: &ProblemInstance,
        steps: usize,
        paths: usize,
    ) -> (PathEnsemble, BackwardEnsemble, AdjointEnsemble) {
        let grid = TimeGrid::new(steps, p.dims.horizon).unwrap();
        let noise = Arc::new(sample_noise(grid, paths, 5));
        let ens = simulate_forward(p, &ConstantControl(dvector![0.0]), &noise).unwrap();
        let basis = RegressionBasis::default();
        let back = solve_backward(p, &ens, &basis).unwrap();
        let adj = solve_adjoint(p, &ens, &back, &basis).unwrap();
        (ens, back, adj)
    }

    #[test]
    fn zero_data_gives_zero_adjoints() {
        let dims = Dimensions::new(1, 1, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.3])
            .with_sigma1(|_| dvector![1.0])
            .with_sigma1_x(|_| dmatrix![0.0])
            .with_sigma1_u(|_| dmatrix![0.0]);
        let p = build_problem("zero", dims, coeffs, ControlSet::unbounded(1)).unwrap();
        let (_, _, adj) = solve(&p, 16, 400);
        for v in [
            &adj.p,
            &adj.p_pred,
            &adj.q1,
            &adj.q2,
            &adj.k,
            &adj.r,
            &adj.r1,
            &adj.r2,
        ] {
            assert!(v.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn k_follows_linear_ode() {
        // γ_y ≡ c, f_y ≡ α: k(t) = −c e^{−αt}
        let (c, alpha) = (1.0, 1.0);
        let dims = Dimensions::new(1, 1, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.0])
            .with_driver(move |p| p.y.clone() * alpha)
            .with_driver_y(move |_| dmatrix![alpha])
            .with_driver_x(|_| dmatrix![0.0])
            .with_driver_z1(|_| dmatrix![0.0])
            .with_driver_z2(|_| dmatrix![0.0])
            .with_driver_u(|_| dmatrix![0.0])
            .with_initial_cost(move |y| c * y[0])
            .with_initial_cost_y(move |_| dvector![c]);
        let p = build_problem("k", dims, coeffs, ControlSet::unbounded(1)).unwrap();
        let steps = 1000;
        let (_, _, adj) = solve(&p, steps, 20);
        let explicit = -c * (1.0 - alpha / steps as f64).powi(steps as i32);
        assert!((adj.k(3, steps)[0] - explicit).abs() < 1e-12);
        assert!((adj.k(3, steps)[0] + (-alpha).exp()).abs() < 1e-3);
        assert_eq!(adj.k(0, 0)[0], -c);
    }

    #[test]
    fn terminal_conditions_hold_exactly() {
        let dims = Dimensions::new(1, 1, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.5])
            .with_sigma1(|_| dvector![1.0])
            .with_sigma1_x(|_| dmatrix![0.0])
            .with_sigma1_u(|_| dmatrix![0.0])
            .with_terminal(|x| dvector![2.0 * x[0]])
            .with_terminal_x(|_| dmatrix![2.0])
            .with_terminal_cost(|x| x[0] * x[0])
            .with_terminal_cost_x(|x| dvector![2.0 * x[0]])
            .with_initial_cost(|y| y[0])
            .with_initial_cost_y(|_| dvector![1.0]);
        let p = build_problem("tc", dims, coeffs, ControlSet::unbounded(1)).unwrap();
        let (ens, _, adj) = solve(&p, 8, 300);
        for i in 0..300 {
            let x = ens.x(i, 8)[0];
            assert_eq!(adj.r(i, 8), x * x);
            assert_eq!(adj.p(i, 8)[0], 2.0 * x - 2.0 * adj.k(i, 8)[0]);
            assert_eq!(adj.k(i, 0)[0], -1.0);
        }
    }
}
