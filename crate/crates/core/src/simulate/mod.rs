//! Forward simulation under the reference measure `P`: the state equation with
//! the observation substituted in, and the Girsanov log-density.
//!
//! Under `P` both `W` and `Y` are Brownian. One Euler–Maruyama step reads
//!
//! ```text
//! x_{j+1}    = x_j + (b - σ₂h)(t_j, x_j, u_j) dt + σ₁ ΔW_j + σ₂ ΔY_j
//! Y_{j+1}    = Y_j + ΔY_j
//! logρ_{j+1} = logρ_j + h_j ΔY_j - ½ h_j² dt
//! ```
//!
//! with `u_j` evaluated at the left endpoint from `Y_0..=Y_j` and projected
//! onto `U`. Expectations under the controlled measure are recovered by
//! weighting with `ρ = exp(logρ)`.

mod diagnostics;
mod noise;

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{Point, ProblemInstance};

pub use diagnostics::{
    density_martingale_check, moment_diagnostics, MartingaleCheck, MomentDiagnostics,
};
pub use noise::{sample_noise, NoiseEnsemble, CHANNEL_W, CHANNEL_Y};

/// Uniform grid `t_i = i·T/N`, with `t_N = T` exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument(
                "grid needs at least one step".into(),
            ));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be > 0, got {horizon}"
            )));
        }
        Ok(Self { steps, horizon })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }
}

/// An observation-adapted control law: the control at step `j` may only read
/// `Y_0..=Y_j`.
pub trait ControlLaw: Sync {
    fn control_dim(&self) -> usize;

    /// `y_prefix` holds `Y_0, …, Y_j` (length `step + 1`).
    fn control(&self, step: usize, grid: &TimeGrid, y_prefix: &[f64]) -> DVector<f64>;
}

/// Convex combination `ū + ε(u − ū)` of two control laws.
pub struct Perturbed<'a, A: ?Sized, B: ?Sized> {
    pub base: &'a A,
    pub target: &'a B,
    pub eps: f64,
}

impl<A: ControlLaw + ?Sized, B: ControlLaw + ?Sized> ControlLaw for Perturbed<'_, A, B> {
    fn control_dim(&self) -> usize {
        self.base.control_dim()
    }

    fn control(&self, step: usize, grid: &TimeGrid, y_prefix: &[f64]) -> DVector<f64> {
        let ub = self.base.control(step, grid, y_prefix);
        if self.eps == 0.0 {
            return ub;
        }
        let ut = self.target.control(step, grid, y_prefix);
        &ub + (ut - &ub) * self.eps
    }
}

/// Constant control `u(t) ≡ value`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantControl(pub DVector<f64>);

impl ControlLaw for ConstantControl {
    fn control_dim(&self) -> usize {
        self.0.len()
    }

    fn control(&self, _: usize, _: &TimeGrid, _: &[f64]) -> DVector<f64> {
        self.0.clone()
    }
}

/// Simulated forward ensemble.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    grid: TimeGrid,
    noise: Arc<NoiseEnsemble>,
    n: usize,
    k: usize,
    /// `(path, step ≤ N, component)`
    x: Vec<f64>,
    /// `(path, step ≤ N)`
    obs: Vec<f64>,
    log_rho: Vec<f64>,
    /// `(path, step < N, component)`
    u: Vec<f64>,
    /// `(path, step < N)`
    h: Vec<f64>,
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn noise(&self) -> &Arc<NoiseEnsemble> {
        &self.noise
    }

    pub fn paths(&self) -> usize {
        self.noise.paths()
    }

    pub fn seed(&self) -> u64 {
        self.noise.seed()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn x(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * (self.grid.steps + 1) + step) * self.n;
        &self.x[off..off + self.n]
    }

    pub fn x_vec(&self, path: usize, step: usize) -> DVector<f64> {
        DVector::from_column_slice(self.x(path, step))
    }

    /// Cumulative observation `Y_j`.
    #[inline]
    pub fn obs(&self, path: usize, step: usize) -> f64 {
        self.obs[path * (self.grid.steps + 1) + step]
    }

    /// `Y_0, …, Y_N` of one path.
    pub fn obs_path(&self, path: usize) -> &[f64] {
        let w = self.grid.steps + 1;
        &self.obs[path * w..(path + 1) * w]
    }

    #[inline]
    pub fn log_rho(&self, path: usize, step: usize) -> f64 {
        self.log_rho[path * (self.grid.steps + 1) + step]
    }

    #[inline]
    pub fn rho(&self, path: usize, step: usize) -> f64 {
        self.log_rho(path, step).exp()
    }

    #[inline]
    pub fn u(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * self.grid.steps + step) * self.k;
        &self.u[off..off + self.k]
    }

    pub fn u_vec(&self, path: usize, step: usize) -> DVector<f64> {
        DVector::from_column_slice(self.u(path, step))
    }

    /// `h(t_j, x_j, u_j)` for `j < N`.
    #[inline]
    pub fn h(&self, path: usize, step: usize) -> f64 {
        self.h[path * self.grid.steps + step]
    }

    #[inline]
    pub fn dw(&self, path: usize, step: usize) -> f64 {
        self.noise.dw(path, step)
    }

    #[inline]
    pub fn dy(&self, path: usize, step: usize) -> f64 {
        self.noise.dy(path, step)
    }

    /// Innovation increment `ΔW^u = ΔY − h·dt`.
    #[inline]
    pub fn innovation(&self, path: usize, step: usize) -> f64 {
        self.dy(path, step) - self.h(path, step) * self.grid.dt()
    }

    /// Forward point `(t_j, x_j, ·, ·, ·, u_j)` with backward slots zero-sized
    /// to `m`. At `j = N` the control slot repeats `u_{N-1}`.
    pub fn point(&self, path: usize, step: usize, m: usize) -> Point {
        let us = step.min(self.grid.steps - 1);
        Point {
            t: self.grid.t(step),
            x: self.x_vec(path, step),
            y: DVector::zeros(m),
            z1: DVector::zeros(m),
            z2: DVector::zeros(m),
            u: self.u_vec(path, us),
        }
    }

    /// Writes `path,step,t,x_*,Y,logrho,u_*`; `u` is blank at the final node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path".to_string(), "step".into(), "t".into()];
        header.extend((0..self.n).map(|c| format!("x{c}")));
        header.push("Y".into());
        header.push("logrho".into());
        header.extend((0..self.k).map(|c| format!("u{c}")));
        w.write_record(&header)?;
        let steps = self.grid.steps;
        for i in 0..self.paths() {
            for j in 0..=steps {
                let mut rec = vec![i.to_string(), j.to_string(), fmt_f64(self.grid.t(j))];
                rec.extend(self.x(i, j).iter().map(|v| fmt_f64(*v)));
                rec.push(fmt_f64(self.obs(i, j)));
                rec.push(fmt_f64(self.log_rho(i, j)));
                if j < steps {
                    rec.extend(self.u(i, j).iter().map(|v| fmt_f64(*v)));
                } else {
                    rec.extend((0..self.k).map(|_| String::new()));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Floats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct PathRecord {
    x: Vec<f64>,
    obs: Vec<f64>,
    log_rho: Vec<f64>,
    u: Vec<f64>,
    h: Vec<f64>,
}

/// Euler–Maruyama for the forward state and the log-density under `P`.
pub fn simulate_forward<L: ControlLaw + ?Sized>(
    p: &ProblemInstance,
    law: &L,
    noise: &Arc<NoiseEnsemble>,
) -> Result<PathEnsemble> {
    let dims = p.dims;
    if law.control_dim() != dims.k {
        return Err(Error::DimensionMismatch {
            what: "control law".into(),
            expected: dims.k,
            got: law.control_dim(),
        });
    }
    let grid = *noise.grid();
    if (grid.horizon() - dims.horizon).abs() > 1e-12 * dims.horizon {
        return Err(Error::InvalidArgument(format!(
            "grid horizon {} differs from problem horizon {}",
            grid.horizon(),
            dims.horizon
        )));
    }
    let paths = noise.paths();
    let records: Vec<Result<PathRecord>> = (0..paths)
        .into_par_iter()
        .map(|i| simulate_path(p, law, noise, i))
        .collect();

    let steps = grid.steps();
    let (n, k) = (dims.n, dims.k);
    let mut ens = PathEnsemble {
        grid,
        noise: Arc::clone(noise),
        n,
        k,
        x: Vec::with_capacity(paths * (steps + 1) * n),
        obs: Vec::with_capacity(paths * (steps + 1)),
        log_rho: Vec::with_capacity(paths * (steps + 1)),
        u: Vec::with_capacity(paths * steps * k),
        h: Vec::with_capacity(paths * steps),
    };
    for rec in records {
        let rec = rec?;
        ens.x.extend_from_slice(&rec.x);
        ens.obs.extend_from_slice(&rec.obs);
        ens.log_rho.extend_from_slice(&rec.log_rho);
        ens.u.extend_from_slice(&rec.u);
        ens.h.extend_from_slice(&rec.h);
    }
    Ok(ens)
}

fn simulate_path<L: ControlLaw + ?Sized>(
    p: &ProblemInstance,
    law: &L,
    noise: &NoiseEnsemble,
    path: usize,
) -> Result<PathRecord> {
    let dims = p.dims;
    let grid = noise.grid();
    let steps = grid.steps();
    let dt = grid.dt();
    let mut rec = PathRecord {
        x: Vec::with_capacity((steps + 1) * dims.n),
        obs: Vec::with_capacity(steps + 1),
        log_rho: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps * dims.k),
        h: Vec::with_capacity(steps),
    };
    let mut pt = Point::zeros(&dims);
    pt.x.copy_from(p.coeffs.x0());
    let mut y_obs = 0.0;
    let mut log_rho = 0.0;
    rec.x.extend_from_slice(pt.x.as_slice());
    rec.obs.push(y_obs);
    rec.log_rho.push(log_rho);

    for j in 0..steps {
        pt.t = grid.t(j);
        pt.u = p.control_set.project(&law.control(j, grid, &rec.obs));
        if pt.u.len() != dims.k {
            return Err(Error::DimensionMismatch {
                what: "control".into(),
                expected: dims.k,
                got: pt.u.len(),
            });
        }
        let b = p.coeffs.drift(&pt);
        let s1 = p.coeffs.sigma1(&pt);
        let s2 = p.coeffs.sigma2(&pt);
        let h = p.coeffs.obs(&pt);
        let dw = noise.dw(path, j);
        let dy = noise.dy(path, j);

        let next = &pt.x + (b - &s2 * h) * dt + s1 * dw + s2 * dy;
        y_obs += dy;
        log_rho += h * dy - 0.5 * h * h * dt;

        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "state",
                path,
                step: j + 1,
            });
        }
        if !log_rho.is_finite() || !log_rho.exp().is_finite() {
            return Err(Error::NonFinite {
                what: "density",
                path,
                step: j + 1,
            });
        }
        rec.u.extend_from_slice(pt.u.as_slice());
        rec.h.push(h);
        pt.x = next;
        rec.x.extend_from_slice(pt.x.as_slice());
        rec.obs.push(y_obs);
        rec.log_rho.push(log_rho);
    }
    Ok(rec)
}
