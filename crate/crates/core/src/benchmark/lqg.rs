//! Scalar partially observed LQG problem and its separation-principle oracle.
//!
//! ```text
//! dx = (a x + b_u u) dt + σ dW,      x(0) = x0
//! dY = h dt + dW^u,                  h = c x  or  h = c (no information)
//! J  = E^u[∫ (Q x² + R u²) dt + Q_T x(T)²]
//! ```
//!
//! With `x̂` the Kalman–Bucy mean, `Σ` its error variance and `P` the control
//! Riccati solution,
//!
//! ```text
//! −P' = 2aP + Q − b_u² P² / R,   P(T) = Q_T
//!  Σ' = 2aΣ + σ² − c² Σ²,        Σ(0) = 0
//!  u* = −G x̂,  G = b_u P / R
//!  J* = P(0) x0² + ∫ (P c² Σ² + Q Σ) dt + Q_T Σ(T)
//! ```

use std::io::Write;
use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DVector};

use crate::error::{Error, Result};
use crate::filter::ObservationFeatureMap;
use crate::par;
use crate::policy::ControlPolicy;
use crate::problem::{build_problem, CoefficientSet, ControlSet, Dimensions, ProblemInstance};
use crate::simulate::{
    fmt_f64, sample_noise, simulate_forward, ControlLaw, PathEnsemble, TimeGrid,
};

/// How the observation drift depends on the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    /// `h = c x`
    Linear,
    /// `h(t) = c`, carrying no state information
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LqgSpec {
    pub a: f64,
    pub b_u: f64,
    pub sigma: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub q_t: f64,
    pub horizon: f64,
    pub x0: f64,
    pub u_max: f64,
    pub observation: Observation,
}

impl Default for LqgSpec {
    fn default() -> Self {
        Self {
            a: 0.0,
            b_u: 1.0,
            sigma: 1.0,
            c: 1.0,
            q: 1.0,
            r: 1.0,
            q_t: 0.0,
            horizon: 1.0,
            x0: 1.0,
            u_max: 10.0,
            observation: Observation::Linear,
        }
    }
}

impl LqgSpec {
    pub fn deterministic_observation() -> Self {
        Self {
            observation: Observation::Deterministic,
            ..Self::default()
        }
    }

    /// Observation gain seen by the filter.
    fn filter_gain(&self) -> f64 {
        match self.observation {
            Observation::Linear => self.c,
            Observation::Deterministic => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || self.q < 0.0 || self.q_t < 0.0 || !(self.u_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid LQG weights {self:?}"
            )));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemInstance> {
        self.validate()?;
        let s = *self;
        let dims = Dimensions::new(1, 0, 1, s.horizon)?;
        let mut coeffs = CoefficientSet::new(dims, dvector![s.x0])
            .with_drift(move |p| dvector![s.a * p.x[0] + s.b_u * p.u[0]])
            .with_drift_x(move |_| dmatrix![s.a])
            .with_drift_u(move |_| dmatrix![s.b_u])
            .with_sigma1(move |_| dvector![s.sigma])
            .with_sigma1_x(|_| dmatrix![0.0])
            .with_sigma1_u(|_| dmatrix![0.0])
            .with_obs_u(|_| dvector![0.0])
            .with_running(move |p| s.q * p.x[0] * p.x[0] + s.r * p.u[0] * p.u[0])
            .with_running_x(move |p| dvector![2.0 * s.q * p.x[0]])
            .with_running_u(move |p| dvector![2.0 * s.r * p.u[0]])
            .with_terminal_cost(move |x| s.q_t * x[0] * x[0])
            .with_terminal_cost_x(move |x| dvector![2.0 * s.q_t * x[0]]);
        let label = match s.observation {
            Observation::Linear => {
                coeffs = coeffs
                    .with_obs(move |p| s.c * p.x[0])
                    .with_obs_x(move |_| dvector![s.c]);
                "lqg"
            }
            Observation::Deterministic => {
                coeffs = coeffs.with_obs(move |_| s.c).with_obs_x(|_| dvector![0.0]);
                "lqg_deterministic_h"
            }
        };
        build_problem(label, dims, coeffs, ControlSet::symmetric_box(1, s.u_max)?)
    }
}

/// Riccati and filter curves on a fine grid with the optimal cost.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiOracle {
    spec: LqgSpec,
    fine_steps: usize,
    control: Vec<f64>,
    variance: Vec<f64>,
    pub j_star: f64,
}

fn rk4(y: f64, t: f64, h: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
    let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
    let k4 = f(t + h, y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Integrates both Riccati equations with RK4 on `fine_steps` steps and
/// assembles `J*` by the trapezoid rule.
pub fn riccati_oracle(spec: &LqgSpec, fine_steps: usize) -> Result<RiccatiOracle> {
    spec.validate()?;
    if fine_steps == 0 {
        return Err(Error::InvalidArgument("fine_steps must be positive".into()));
    }
    let s = *spec;
    let h = s.horizon / fine_steps as f64;
    let c = s.filter_gain();

    let mut control = vec![0.0; fine_steps + 1];
    control[fine_steps] = s.q_t;
    // backward in time: dP/dτ = 2aP + Q − b²P²/R with τ = T − t
    let dp = |_: f64, p: f64| 2.0 * s.a * p + s.q - s.b_u * s.b_u * p * p / s.r;
    for i in (0..fine_steps).rev() {
        control[i] = rk4(control[i + 1], 0.0, h, dp);
    }
    let mut variance = vec![0.0; fine_steps + 1];
    let ds = |_: f64, v: f64| 2.0 * s.a * v + s.sigma * s.sigma - c * c * v * v;
    for i in 0..fine_steps {
        variance[i + 1] = rk4(variance[i], 0.0, h, ds);
    }
    let integrand: Vec<f64> = (0..=fine_steps)
        .map(|i| control[i] * c * c * variance[i] * variance[i] + s.q * variance[i])
        .collect();
    let integral =
        h * (integrand.iter().sum::<f64>() - 0.5 * (integrand[0] + integrand[fine_steps]));
    let j_star = control[0] * s.x0 * s.x0 + integral + s.q_t * variance[fine_steps];
    Ok(RiccatiOracle {
        spec: s,
        fine_steps,
        control,
        variance,
        j_star,
    })
}

impl RiccatiOracle {
    pub fn spec(&self) -> &LqgSpec {
        &self.spec
    }

    fn interp(&self, values: &[f64], t: f64) -> f64 {
        let pos =
            (t / self.spec.horizon * self.fine_steps as f64).clamp(0.0, self.fine_steps as f64);
        let i = (pos.floor() as usize).min(self.fine_steps - 1);
        let w = pos - i as f64;
        values[i] * (1.0 - w) + values[i + 1] * w
    }

    /// Control Riccati solution `P(t)`.
    pub fn p(&self, t: f64) -> f64 {
        self.interp(&self.control, t)
    }

    /// Filter error variance `Σ(t)`.
    pub fn sigma(&self, t: f64) -> f64 {
        self.interp(&self.variance, t)
    }

    /// Feedback gain `G(t) = b_u P(t) / R`.
    pub fn gain(&self, t: f64) -> f64 {
        self.spec.b_u * self.p(t) / self.spec.r
    }

    /// Kalman–Bucy means `x̂_0..=x̂_j` along one observation prefix, Euler
    /// discretized on `grid`, with `controls[s]` applied on step `s`.
    pub fn filter_prefix(&self, grid: &TimeGrid, y_prefix: &[f64], controls: &[f64]) -> Vec<f64> {
        let s = &self.spec;
        let c = s.filter_gain();
        let dt = grid.dt();
        let mut xhat = Vec::with_capacity(y_prefix.len());
        xhat.push(s.x0);
        for j in 0..y_prefix.len() - 1 {
            let x = xhat[j];
            let dy = y_prefix[j + 1] - y_prefix[j];
            let gain = self.sigma(grid.t(j)) * c;
            xhat.push(x + (s.a * x + s.b_u * controls[j]) * dt + gain * (dy - c * x * dt));
        }
        xhat
    }

    /// Kalman–Bucy means `x̂[path][step]` along a simulated ensemble.
    pub fn filter_ensemble(&self, ens: &PathEnsemble) -> Vec<Vec<f64>> {
        let steps = ens.grid().steps();
        par::map_paths(ens.paths(), |i| {
            let u: Vec<f64> = (0..steps).map(|j| ens.u(i, j)[0]).collect();
            self.filter_prefix(ens.grid(), ens.obs_path(i), &u)
        })
    }

    /// Writes `t,P,Sigma,G` on the fine grid.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "P", "Sigma", "G"])?;
        for i in 0..=self.fine_steps {
            let t = if i == self.fine_steps {
                self.spec.horizon
            } else {
                i as f64 * self.spec.horizon / self.fine_steps as f64
            };
            w.write_record([
                fmt_f64(t),
                fmt_f64(self.control[i]),
                fmt_f64(self.variance[i]),
                fmt_f64(self.spec.b_u * self.control[i] / self.spec.r),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The separation-principle feedback `u = −G(t) x̂(t)`, with the filter
/// rerun over the observed prefix.
#[derive(Clone, Debug)]
pub struct OracleLaw<'a> {
    pub oracle: &'a RiccatiOracle,
}

impl ControlLaw for OracleLaw<'_> {
    fn control_dim(&self) -> usize {
        1
    }

    fn control(&self, step: usize, grid: &TimeGrid, y_prefix: &[f64]) -> DVector<f64> {
        // replay the filter, which needs the controls already applied
        let s = self.oracle.spec();
        let c = s.filter_gain();
        let dt = grid.dt();
        let mut x = s.x0;
        let mut u = 0.0;
        for j in 0..=step {
            u = (-self.oracle.gain(grid.t(j)) * x).clamp(-s.u_max, s.u_max);
            if j < step {
                let dy = y_prefix[j + 1] - y_prefix[j];
                let gain = self.oracle.sigma(grid.t(j)) * c;
                x += (s.a * x + s.b_u * u) * dt + gain * (dy - c * x * dt);
            }
        }
        dvector![u]
    }
}

/// Result of fitting the policy class to the oracle actions.
#[derive(Clone, Debug)]
pub struct OracleFit {
    pub policy: ControlPolicy,
    /// RMS of policy minus oracle action, weighted by `ρ` (controlled measure).
    pub rms: f64,
    /// Largest oracle action seen on the fitting paths.
    pub max_abs_action: f64,
}

/// Least-squares fit of the policy features to the oracle actions along
/// paths simulated under the oracle law; rows are weighted by `ρ_j`.
pub fn oracle_policy_fit(
    oracle: &RiccatiOracle,
    fmap: &ObservationFeatureMap,
    grid: TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<OracleFit> {
    let p = oracle.spec().problem()?;
    let noise = Arc::new(sample_noise(grid, paths, seed));
    let law = OracleLaw { oracle };
    let ens = simulate_forward(&p, &law, &noise)?;
    let steps = grid.steps();
    let mut features = Vec::with_capacity(paths * steps);
    let mut targets = Vec::with_capacity(paths * steps);
    let mut weights = Vec::with_capacity(paths * steps);
    let mut max_abs_action = 0.0f64;
    for i in 0..paths {
        for j in 0..steps {
            let u = ens.u(i, j)[0];
            max_abs_action = max_abs_action.max(u.abs());
            features.push(fmap.features(j, &grid, &ens.obs_path(i)[..=j]));
            targets.push(dvector![u]);
            weights.push(ens.rho(i, j));
        }
    }
    let set = p.control_set.clone();
    let (policy, rms) =
        ControlPolicy::fit_weighted(fmap.clone(), set, &features, &targets, &weights)?;
    Ok(OracleFit {
        policy,
        rms,
        max_abs_action,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_cost_means_no_control() {
        let spec = LqgSpec {
            q: 0.0,
            q_t: 0.0,
            ..LqgSpec::default()
        };
        let o = riccati_oracle(&spec, 1000).unwrap();
        assert_eq!(o.j_star, 0.0);
        assert_eq!(o.gain(0.3), 0.0);
    }

    #[test]
    fn curves_match_closed_forms() {
        // a = 0, b = σ = c = Q = R = 1, Q_T = 0: P(t) = tanh(T − t), Σ(t) = tanh(t)
        let o = riccati_oracle(&LqgSpec::default(), 10_000).unwrap();
        for t in [0.0, 0.25, 0.5, 1.0] {
            assert!((o.p(t) - (1.0 - t).tanh()).abs() < 1e-10);
            assert!((o.sigma(t) - t.tanh()).abs() < 1e-10);
        }
    }

    #[test]
    fn optimal_cost_converges_in_fine_steps() {
        let spec = LqgSpec::default();
        let a = riccati_oracle(&spec, 10_000).unwrap().j_star;
        let b = riccati_oracle(&spec, 5_000).unwrap().j_star;
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn oracle_law_matches_filter_replay() {
        let o = riccati_oracle(&LqgSpec::default(), 2000).unwrap();
        let grid = TimeGrid::new(8, 1.0).unwrap();
        let y = [0.0, 0.1, -0.2, 0.05, 0.3];
        let law = OracleLaw { oracle: &o };
        let u: Vec<f64> = (0..4).map(|j| law.control(j, &grid, &y[..=j])[0]).collect();
        let xhat = o.filter_prefix(&grid, &y, &u);
        for j in 0..4 {
            assert!((u[j] + o.gain(grid.t(j)) * xhat[j]).abs() < 1e-14);
        }
    }
}
