//! Regression Monte Carlo for the backward triple `(y, z₁, z₂)` and the
//! adjoint system `(p, q₁, q₂, k, r, R₁, R₂)` along a forward ensemble.
//!
//! Everything runs under the reference measure `P`, where `W` and `Y` are
//! both Brownian. A BSDE `dv = −g dt + a dW + c dW^u` is rewritten with
//! `dW^u = dY − h dt`, so one backward step reads
//!
//! ```text
//! v_j = E[v_{j+1} | F_j] + (g + c h) dt
//! a_j = E[(v_{j+1} − E[v_{j+1} | F_j]) ΔW_j | F_j] / dt
//! c_j = E[(v_{j+1} − E[v_{j+1} | F_j]) ΔY_j | F_j] / dt
//! ```
//!
//! with conditional expectations replaced by polynomial regression on the
//! state `(x_j, Y_j, log ρ_j)`.

mod adjoint;
mod regression;

use std::io::Write;

use crate::error::{Error, Result};
use crate::par;
use crate::problem::{Point, ProblemInstance};
use crate::simulate::{fmt_f64, PathEnsemble};

pub use adjoint::{solve_adjoint, AdjointEnsemble};
pub use regression::{
    feature_count, monomial_exponents, regression_fit, RegressionBasis, Regressor, Ridge,
};

/// Backward triple along an ensemble.
#[derive(Clone, Debug)]
pub struct BackwardEnsemble {
    m: usize,
    steps: usize,
    paths: usize,
    /// `(path, step ≤ N, component)`
    y: Vec<f64>,
    /// `(path, step < N, component)`
    z1: Vec<f64>,
    z2: Vec<f64>,
}

impl BackwardEnsemble {
    /// The trivial solution for `m = 0`.
    pub fn empty(ens: &PathEnsemble) -> Self {
        Self {
            m: 0,
            steps: ens.grid().steps(),
            paths: ens.paths(),
            y: Vec::new(),
            z1: Vec::new(),
            z2: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    #[inline]
    pub fn y(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * (self.steps + 1) + step) * self.m;
        &self.y[off..off + self.m]
    }

    /// `z₁` at `step < N`; at `N` the last value is repeated.
    #[inline]
    pub fn z1(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * self.steps + step.min(self.steps - 1)) * self.m;
        &self.z1[off..off + self.m]
    }

    #[inline]
    pub fn z2(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * self.steps + step.min(self.steps - 1)) * self.m;
        &self.z2[off..off + self.m]
    }

    /// Full point `(t_j, x_j, y_j, z₁_j, z₂_j, u_j)`.
    pub fn point(&self, ens: &PathEnsemble, path: usize, step: usize) -> Point {
        let mut pt = ens.point(path, step, self.m);
        pt.y.copy_from_slice(self.y(path, step));
        pt.z1.copy_from_slice(self.z1(path, step));
        pt.z2.copy_from_slice(self.z2(path, step));
        pt
    }
}

/// Raw regression state `(x_j, Y_j, log ρ_j, Y_{j−s}…)` of every path, row-major.
pub(crate) fn regression_state(
    ens: &PathEnsemble,
    step: usize,
    lags: &[usize],
) -> (Vec<f64>, usize) {
    let dim = ens.state_dim() + 2 + lags.len();
    let mut vars = Vec::with_capacity(ens.paths() * dim);
    for i in 0..ens.paths() {
        vars.extend_from_slice(ens.x(i, step));
        vars.push(ens.obs(i, step));
        vars.push(ens.log_rho(i, step));
        for &s in lags {
            vars.push(ens.obs(i, step.saturating_sub(s)));
        }
    }
    (vars, dim)
}

/// Continuation value and increment-regression coefficients of one
/// scalar target at one step.
pub(crate) struct StepFit {
    pub cont: Vec<f64>,
    pub dw: Vec<f64>,
    pub dy: Vec<f64>,
}

pub(crate) fn fit_step(reg: &Regressor, ens: &PathEnsemble, step: usize, next: &[f64]) -> StepFit {
    let dt = ens.grid().dt();
    let cont = reg.fit(next);
    let resid_w: Vec<f64> = (0..next.len())
        .map(|i| (next[i] - cont[i]) * ens.dw(i, step))
        .collect();
    let resid_y: Vec<f64> = (0..next.len())
        .map(|i| (next[i] - cont[i]) * ens.dy(i, step))
        .collect();
    let dw = reg.fit(&resid_w).into_iter().map(|v| v / dt).collect();
    let dy = reg.fit(&resid_y).into_iter().map(|v| v / dt).collect();
    StepFit { cont, dw, dy }
}

/// Backward Euler for `dy = (f − z₂h) dt + z₁ dW + z₂ dY`, `y(T) = φ(x(T))`,
/// with the continuation value substituted into the driver.
pub fn solve_backward(
    p: &ProblemInstance,
    ens: &PathEnsemble,
    basis: &RegressionBasis,
) -> Result<BackwardEnsemble> {
    let m = p.dims.m;
    if m == 0 {
        return Ok(BackwardEnsemble::empty(ens));
    }
    let steps = ens.grid().steps();
    let paths = ens.paths();
    let dt = ens.grid().dt();
    let mut out = BackwardEnsemble {
        m,
        steps,
        paths,
        y: vec![0.0; paths * (steps + 1) * m],
        z1: vec![0.0; paths * steps * m],
        z2: vec![0.0; paths * steps * m],
    };
    let terminal: Vec<Vec<f64>> = par::map_paths(paths, |i| {
        p.coeffs.terminal(&ens.x_vec(i, steps)).as_slice().to_vec()
    });
    for (i, v) in terminal.into_iter().enumerate() {
        let off = (i * (steps + 1) + steps) * m;
        out.y[off..off + m].copy_from_slice(&v);
    }

    for j in (0..steps).rev() {
        let (vars, dim) = regression_state(ens, j, &basis.obs_lags);
        let reg = Regressor::polynomial(&vars, dim, basis.degree, basis.ridge, j)?;
        let mut cont = vec![0.0; paths * m];
        for c in 0..m {
            let next: Vec<f64> = (0..paths).map(|i| out.y(i, j + 1)[c]).collect();
            let fit = fit_step(&reg, ens, j, &next);
            for i in 0..paths {
                cont[i * m + c] = fit.cont[i];
                out.z1[(i * steps + j) * m + c] = fit.dw[i];
                out.z2[(i * steps + j) * m + c] = fit.dy[i];
            }
        }
        let values: Vec<Vec<f64>> = par::map_paths(paths, |i| {
            let mut pt = ens.point(i, j, m);
            pt.y.copy_from_slice(&cont[i * m..(i + 1) * m]);
            pt.z1.copy_from_slice(out.z1(i, j));
            pt.z2.copy_from_slice(out.z2(i, j));
            let drift = p.coeffs.driver(&pt) - &pt.z2 * ens.h(i, j);
            (&pt.y - drift * dt).as_slice().to_vec()
        });
        for (i, v) in values.into_iter().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "backward value",
                    path: i,
                    step: j,
                });
            }
            let off = (i * (steps + 1) + j) * m;
            out.y[off..off + m].copy_from_slice(&v);
        }
    }
    Ok(out)
}

/// Writes `name,mean,sd` rows summarizing the backward and adjoint values at `t = 0`.
pub fn write_initial_summary<W: Write>(
    back: &BackwardEnsemble,
    adj: &AdjointEnsemble,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "mean", "sd"])?;
    let mut row = |name: String, vals: Vec<f64>| -> Result<()> {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        w.write_record([name, fmt_f64(mean), fmt_f64(sd)])?;
        Ok(())
    };
    let paths = back.paths();
    for c in 0..back.dim() {
        row(
            format!("y{c}"),
            (0..paths).map(|i| back.y(i, 0)[c]).collect(),
        )?;
        row(
            format!("z1_{c}"),
            (0..paths).map(|i| back.z1(i, 0)[c]).collect(),
        )?;
        row(
            format!("z2_{c}"),
            (0..paths).map(|i| back.z2(i, 0)[c]).collect(),
        )?;
        row(
            format!("k{c}"),
            (0..paths).map(|i| adj.k(i, 0)[c]).collect(),
        )?;
    }
    for c in 0..adj.state_dim() {
        row(
            format!("p{c}"),
            (0..paths).map(|i| adj.p(i, 0)[c]).collect(),
        )?;
        row(
            format!("q1_{c}"),
            (0..paths).map(|i| adj.q1(i, 0)[c]).collect(),
        )?;
        row(
            format!("q2_{c}"),
            (0..paths).map(|i| adj.q2(i, 0)[c]).collect(),
        )?;
    }
    row("r".into(), (0..paths).map(|i| adj.r(i, 0)).collect())?;
    row("R1".into(), (0..paths).map(|i| adj.r1(i, 0)).collect())?;
    row("R2".into(), (0..paths).map(|i| adj.r2(i, 0)).collect())?;
    w.flush()?;
    Ok(())
}
