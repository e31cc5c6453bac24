//! Conditioning on the observation filtration, the Bayes (Kallianpur–Striebel)
//! ratio for controlled-measure conditional expectations, and cost evaluation.

use std::sync::Arc;

use crate::bsde::{feature_count, monomial_exponents, BackwardEnsemble, Regressor, Ridge};
use crate::error::{Error, Result};
use crate::par;
use crate::problem::{Point, ProblemInstance};
use crate::simulate::{ControlLaw, NoiseEnsemble, PathEnsemble, TimeGrid};
use crate::stats::Estimate;

/// Lagged-observation features `(t_j, Y_j, Y_{j−s₁}, …, Y_{j−s_L})`, lags
/// clamped at 0, lifted to monomials of total degree at most `degree`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationFeatureMap {
    offsets: Vec<usize>,
    degree: usize,
    exponents: Vec<Vec<u32>>,
}

impl ObservationFeatureMap {
    pub fn new(mut offsets: Vec<usize>, degree: usize) -> Result<Self> {
        offsets.sort_unstable();
        offsets.dedup();
        if offsets.first() == Some(&0) {
            return Err(Error::InvalidArgument(
                "lag offsets must be positive".into(),
            ));
        }
        let exponents = monomial_exponents(offsets.len() + 2, degree);
        Ok(Self {
            offsets,
            degree,
            exponents,
        })
    }

    /// Offsets `{1, ⌈N/8⌉}` with degree 2.
    pub fn default_for(steps: usize) -> Self {
        Self::new(vec![1, steps.div_ceil(8).max(1)], 2).expect("positive offsets")
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of raw variables, `L + 2`.
    pub fn var_count(&self) -> usize {
        self.offsets.len() + 2
    }

    pub fn feature_count(&self) -> usize {
        feature_count(self.var_count(), self.degree)
    }

    /// Raw variables at `step` from `y_prefix = Y_0..=Y_step`.
    pub fn vars_into(&self, step: usize, grid: &TimeGrid, y_prefix: &[f64], out: &mut Vec<f64>) {
        debug_assert!(y_prefix.len() > step);
        out.push(grid.t(step));
        out.push(y_prefix[step]);
        for &s in &self.offsets {
            out.push(y_prefix[step.saturating_sub(s)]);
        }
    }

    pub fn vars(&self, step: usize, grid: &TimeGrid, y_prefix: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.var_count());
        self.vars_into(step, grid, y_prefix, &mut v);
        v
    }

    /// Monomial features (constant first) at `step`.
    pub fn features(&self, step: usize, grid: &TimeGrid, y_prefix: &[f64]) -> Vec<f64> {
        let v = self.vars(step, grid, y_prefix);
        self.exponents
            .iter()
            .map(|e| {
                e.iter()
                    .zip(&v)
                    .fold(1.0, |acc, (&p, &x)| acc * x.powi(p as i32))
            })
            .collect()
    }

    /// Cross-sectional regressor on the observation variables at `step`.
    pub fn regressor(&self, ens: &PathEnsemble, step: usize, ridge: Ridge) -> Result<Regressor> {
        let dim = self.var_count();
        let mut vars = Vec::with_capacity(ens.paths() * dim);
        for i in 0..ens.paths() {
            self.vars_into(step, ens.grid(), &ens.obs_path(i)[..=step], &mut vars);
        }
        Regressor::polynomial(&vars, dim, self.degree, ridge, step)
    }
}

/// Regression estimate of `E[value | F^Y_{t_j}]` under `P`.
pub fn cond_expect_y(
    values: &[f64],
    ens: &PathEnsemble,
    step: usize,
    fmap: &ObservationFeatureMap,
    ridge: Ridge,
) -> Result<Vec<f64>> {
    check_len(values, ens)?;
    Ok(fmap.regressor(ens, step, ridge)?.fit(values))
}

/// Relative weight below which a path counts as carrying no density.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Controlled-measure conditional expectation with the number of paths whose
/// density weight fell below [`DENOMINATOR_FLOOR`] times the largest one.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesEstimate {
    pub values: Vec<f64>,
    pub floored: usize,
}

/// `E^u[value | F^Y_t] = E[ρ value | F^Y_t] / E[ρ | F^Y_t]`, estimated as the
/// `ρ`-weighted least-squares projection of `value` on the features.
pub fn bayes_cond_expect(
    values: &[f64],
    ens: &PathEnsemble,
    step: usize,
    fmap: &ObservationFeatureMap,
    ridge: Ridge,
) -> Result<BayesEstimate> {
    check_len(values, ens)?;
    let reg = fmap.regressor(ens, step, ridge)?;
    bayes_with(&reg, values, ens, step, ridge)
}

/// Weights are `ρ / max ρ`, formed in log space. The weighted projection is
/// the least-squares fit under the controlled measure, so it keeps its
/// accuracy where `E[ρ | F^Y]` itself is far from polynomial.
fn bayes_with(
    reg: &Regressor,
    values: &[f64],
    ens: &PathEnsemble,
    step: usize,
    ridge: Ridge,
) -> Result<BayesEstimate> {
    let paths = ens.paths();
    let log_rho: Vec<f64> = (0..paths).map(|i| ens.log_rho(i, step)).collect();
    let top = log_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_rho.iter().map(|l| (l - top).exp()).collect();
    let floored = weights.iter().filter(|w| **w < DENOMINATOR_FLOOR).count();
    if floored * 100 > paths || !top.is_finite() {
        return Err(Error::DegenerateDensity {
            step,
            floored,
            paths,
        });
    }
    let total: f64 = weights.iter().sum();
    let mean = weights.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / total;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let values = reg
        .weighted_fit(&weights, &centered, ridge)?
        .into_iter()
        .map(|v| v + mean)
        .collect();
    Ok(BayesEstimate { values, floored })
}

fn check_len(values: &[f64], ens: &PathEnsemble) -> Result<()> {
    if values.len() != ens.paths() {
        return Err(Error::DimensionMismatch {
            what: "values".into(),
            expected: ens.paths(),
            got: values.len(),
        });
    }
    Ok(())
}

/// Per-path cost `Σ_j ρ_j l_j dt + ρ_N Φ(x_N) + γ(y_0)`.
pub fn path_costs(p: &ProblemInstance, ens: &PathEnsemble, back: &BackwardEnsemble) -> Vec<f64> {
    let steps = ens.grid().steps();
    let dt = ens.grid().dt();
    let m = p.dims.m;
    par::map_paths(ens.paths(), |i| {
        let mut total = 0.0;
        for j in 0..steps {
            let pt = if m == 0 {
                ens.point(i, j, 0)
            } else {
                back.point(ens, i, j)
            };
            total += ens.rho(i, j) * p.coeffs.running(&pt) * dt;
        }
        total += ens.rho(i, steps) * p.coeffs.terminal_cost(&ens.x_vec(i, steps));
        if m > 0 {
            total += p
                .coeffs
                .initial_cost(&nalgebra::DVector::from_column_slice(back.y(i, 0)));
        }
        total
    })
}

/// Per-path cost sampled directly under the controlled measure: the noise
/// pair is read as `(ΔW, ΔW^u)` and `ΔY = h dt + ΔW^u`, so no density weight
/// appears. Requires `m = 0`.
pub fn controlled_path_costs<L: ControlLaw + ?Sized>(
    p: &ProblemInstance,
    law: &L,
    noise: &Arc<NoiseEnsemble>,
) -> Result<Vec<f64>> {
    let dims = p.dims;
    if dims.m != 0 {
        return Err(Error::InvalidArgument(
            "controlled-measure sampling needs m = 0".into(),
        ));
    }
    if law.control_dim() != dims.k {
        return Err(Error::DimensionMismatch {
            what: "control law".into(),
            expected: dims.k,
            got: law.control_dim(),
        });
    }
    let grid = *noise.grid();
    let dt = grid.dt();
    let costs: Vec<Result<f64>> = par::map_paths(noise.paths(), |i| {
        let mut pt = Point::zeros(&dims);
        pt.x.copy_from(p.coeffs.x0());
        let mut obs = Vec::with_capacity(grid.steps() + 1);
        obs.push(0.0);
        let mut total = 0.0;
        for j in 0..grid.steps() {
            pt.t = grid.t(j);
            pt.u = p.control_set.project(&law.control(j, &grid, &obs));
            total += p.coeffs.running(&pt) * dt;
            let dv = noise.dy(i, j);
            let next_obs = obs[j] + p.coeffs.obs(&pt) * dt + dv;
            pt.x = &pt.x
                + p.coeffs.drift(&pt) * dt
                + p.coeffs.sigma1(&pt) * noise.dw(i, j)
                + p.coeffs.sigma2(&pt) * dv;
            if pt.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "state",
                    path: i,
                    step: j + 1,
                });
            }
            obs.push(next_obs);
        }
        Ok(total + p.coeffs.terminal_cost(&pt.x))
    });
    costs.into_iter().collect()
}

/// Monte Carlo estimate of the cost with its standard error.
pub fn eval_cost(p: &ProblemInstance, ens: &PathEnsemble, back: &BackwardEnsemble) -> Estimate {
    Estimate::from_samples(&path_costs(p, ens, back))
}
