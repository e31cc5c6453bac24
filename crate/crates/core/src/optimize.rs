//! Gradient-based policy search driven by the variational formula: the cost
//! derivative along `ū + ε(u − ū)` is `E^ū[∫ ⟨H_u, u − ū⟩ dt]`, estimated
//! under `P` as a `ρ`-weighted sum.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bsde::{
    solve_adjoint, solve_backward, AdjointEnsemble, BackwardEnsemble, RegressionBasis, Ridge,
};
use crate::error::{Error, Result};
use crate::filter::{bayes_cond_expect, eval_cost, ObservationFeatureMap};
use crate::hamiltonian::{grad_h, Wrt};
use crate::par;
use crate::policy::ControlPolicy;
use crate::problem::ProblemInstance;
use crate::simulate::{
    sample_noise, simulate_forward, ControlLaw, NoiseEnsemble, PathEnsemble, TimeGrid,
};
use crate::stats::Estimate;

/// Forward, backward and adjoint ensembles along one control law.
#[derive(Clone, Debug)]
pub struct Solved {
    pub ens: PathEnsemble,
    pub back: BackwardEnsemble,
    pub adj: AdjointEnsemble,
}

/// Runs the full pipeline on fixed noise.
pub fn solve_all<L: ControlLaw + ?Sized>(
    p: &ProblemInstance,
    law: &L,
    noise: &Arc<NoiseEnsemble>,
    basis: &RegressionBasis,
) -> Result<Solved> {
    let ens = simulate_forward(p, law, noise)?;
    let back = solve_backward(p, &ens, basis)?;
    let adj = solve_adjoint(p, &ens, &back, basis)?;
    Ok(Solved { ens, back, adj })
}

/// Cost estimate along a law on fixed noise. The adjoint is skipped.
pub fn estimate_cost<L: ControlLaw + ?Sized>(
    p: &ProblemInstance,
    law: &L,
    noise: &Arc<NoiseEnsemble>,
    basis: &RegressionBasis,
) -> Result<Estimate> {
    let ens = simulate_forward(p, law, noise)?;
    let back = solve_backward(p, &ens, basis)?;
    Ok(eval_cost(p, &ens, &back))
}

/// `H_u` at every `(path, step < N)`, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalGradient {
    k: usize,
    steps: usize,
    values: Vec<f64>,
}

impl FunctionalGradient {
    pub fn control_dim(&self) -> usize {
        self.k
    }

    pub fn get(&self, path: usize, step: usize) -> &[f64] {
        let at = (path * self.steps + step) * self.k;
        &self.values[at..at + self.k]
    }

    /// Component `c` at `step` across all paths.
    pub fn column(&self, step: usize, c: usize) -> Vec<f64> {
        let paths = self.values.len() / (self.steps * self.k).max(1);
        (0..paths).map(|i| self.get(i, step)[c]).collect()
    }
}

/// Evaluates `H_u` at the shifted Hamiltonian point along every path and step,
/// with `p` taken as its one-step predictor. Values are raw; callers weight
/// them by `ρ`.
pub fn functional_gradient(
    p: &ProblemInstance,
    ens: &PathEnsemble,
    back: &BackwardEnsemble,
    adj: &AdjointEnsemble,
) -> Result<FunctionalGradient> {
    let steps = ens.grid().steps();
    let k = p.dims.k;
    let rows: Vec<Result<Vec<f64>>> = par::map_paths(ens.paths(), |i| {
        let mut out = Vec::with_capacity(steps * k);
        for j in 0..steps {
            let hp = adj.control_point(p, ens, back, i, j);
            out.extend_from_slice(grad_h(&hp, &p.coeffs, Wrt::U)?.as_slice());
        }
        Ok(out)
    });
    let mut values = Vec::with_capacity(ens.paths() * steps * k);
    for r in rows {
        values.extend(r?);
    }
    Ok(FunctionalGradient { k, steps, values })
}

/// Monte Carlo estimate of `∇_θ J` with per-coordinate standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGradient {
    pub value: DVector<f64>,
    pub se: DVector<f64>,
}

/// Per-path sums `Σ_j ρ_j (∂u/∂θ)ᵀ g_j dt`.
pub fn per_path_gradients(
    pol: &ControlPolicy,
    ens: &PathEnsemble,
    g: &FunctionalGradient,
) -> Vec<DVector<f64>> {
    let grid = *ens.grid();
    let dt = grid.dt();
    let np = pol.param_count();
    par::map_paths(ens.paths(), |i| {
        let y = ens.obs_path(i);
        let mut acc = DVector::zeros(np);
        for j in 0..grid.steps() {
            let jac = pol.jacobian(j, &grid, &y[..=j]);
            let gv = DVector::from_column_slice(g.get(i, j));
            acc += jac.tr_mul(&gv) * (ens.rho(i, j) * dt);
        }
        acc
    })
}

/// `(1/M) Σ_i Σ_j ρ_{ij} (∂u/∂θ)ᵀ g_{ij} dt` and its standard error.
pub fn parameter_gradient(
    p: &ProblemInstance,
    pol: &ControlPolicy,
    ens: &PathEnsemble,
    back: &BackwardEnsemble,
    adj: &AdjointEnsemble,
) -> Result<ParameterGradient> {
    let g = functional_gradient(p, ens, back, adj)?;
    Ok(summarize(
        &per_path_gradients(pol, ens, &g),
        pol.param_count(),
    ))
}

fn summarize(per_path: &[DVector<f64>], np: usize) -> ParameterGradient {
    let mut value = DVector::zeros(np);
    let mut se = DVector::zeros(np);
    for a in 0..np {
        let col: Vec<f64> = per_path.iter().map(|v| v[a]).collect();
        let e = Estimate::from_samples(&col);
        value[a] = e.mean;
        se[a] = e.se;
    }
    ParameterGradient { value, se }
}

/// Mean-square violation of the projected stationarity condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub total: f64,
    /// `residual_j` for `j < N`.
    pub profile: Vec<f64>,
}

/// With `m_{ij}` the Bayes estimate of `E^u[H_u | F^Y_{t_j}]`,
/// `residual_j = (1/M) Σ_i |u_{ij} − proj_U(u_{ij} − m_{ij})|²` and
/// `total = Σ_j residual_j dt`.
pub fn necessary_condition_residual(
    p: &ProblemInstance,
    ens: &PathEnsemble,
    back: &BackwardEnsemble,
    adj: &AdjointEnsemble,
    fmap: &ObservationFeatureMap,
    ridge: Ridge,
) -> Result<Residual> {
    let g = functional_gradient(p, ens, back, adj)?;
    residual_from(p, ens, &g, fmap, ridge)
}

fn residual_from(
    p: &ProblemInstance,
    ens: &PathEnsemble,
    g: &FunctionalGradient,
    fmap: &ObservationFeatureMap,
    ridge: Ridge,
) -> Result<Residual> {
    let steps = ens.grid().steps();
    let paths = ens.paths();
    let k = p.dims.k;
    let mut profile = Vec::with_capacity(steps);
    for j in 0..steps {
        let mut m = vec![0.0; paths * k];
        for c in 0..k {
            let est = bayes_cond_expect(&g.column(j, c), ens, j, fmap, ridge)?;
            for (i, v) in est.values.into_iter().enumerate() {
                m[i * k + c] = v;
            }
        }
        let sq: Vec<f64> = par::map_paths(paths, |i| {
            let u = ens.u_vec(i, j);
            let shifted = &u - DVector::from_column_slice(&m[i * k..(i + 1) * k]);
            (&u - p.control_set.project(&shifted)).norm_squared()
        });
        profile.push(sq.iter().sum::<f64>() / paths as f64);
    }
    let total = profile.iter().sum::<f64>() * ens.grid().dt();
    Ok(Residual { total, profile })
}

/// Search direction applied to the gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    /// `θ ← θ − η g`
    Plain { eta: f64 },
    /// `θ ← θ − η G⁻¹ g` with `G` the `ρ`-weighted feature Gram matrix.
    Gram { eta: f64 },
}

impl StepRule {
    fn eta(self) -> f64 {
        match self {
            StepRule::Plain { eta } | StepRule::Gram { eta } => eta,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSettings {
    pub grid: TimeGrid,
    pub paths: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub step_rule: StepRule,
    pub basis: RegressionBasis,
}

/// One row of the optimization log.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub iter: usize,
    pub j: Estimate,
    pub grad_norm: f64,
    /// Necessary-condition residual at the iterate.
    pub residual: f64,
    /// Step length accepted by the line search (0 when none was taken).
    pub step: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub policy: ControlPolicy,
    pub reports: Vec<GradientReport>,
    /// Line search found no decrease after 20 halvings.
    pub stalled: bool,
}

const MAX_HALVINGS: usize = 20;
const ARMIJO: f64 = 1e-4;

/// Projected-gradient descent on `θ`. Every iteration re-solves the full
/// pipeline at the current policy on fresh noise (`seed + iter`), and the
/// backtracking comparison reuses that noise.
pub fn optimize_policy(
    p: &ProblemInstance,
    pol0: ControlPolicy,
    settings: &OptimizerSettings,
) -> Result<OptimizeResult> {
    if settings.grid.horizon() != p.dims.horizon {
        return Err(Error::InvalidArgument(
            "grid horizon differs from the problem horizon".into(),
        ));
    }
    if !(settings.step_rule.eta() > 0.0) {
        return Err(Error::InvalidArgument("step size must be positive".into()));
    }
    let fmap = pol0.feature_map().clone();
    let ridge = settings.basis.ridge;
    let mut pol = pol0;
    let mut reports = Vec::new();
    let mut stalled = false;
    for iter in 0..=settings.max_iters {
        let seed = settings.seed.wrapping_add(iter as u64);
        let noise = Arc::new(sample_noise(settings.grid, settings.paths, seed));
        let s = solve_all(p, &pol, &noise, &settings.basis)?;
        let j = eval_cost(p, &s.ens, &s.back);
        let g = functional_gradient(p, &s.ens, &s.back, &s.adj)?;
        let grad = summarize(&per_path_gradients(&pol, &s.ens, &g), pol.param_count()).value;
        let residual = residual_from(p, &s.ens, &g, &fmap, ridge)?.total;
        let grad_norm = grad.norm();
        let mut report = GradientReport {
            iter,
            j,
            grad_norm,
            residual,
            step: 0.0,
            seed,
        };
        if grad_norm <= settings.tol * (1.0 + j.mean.abs()) || iter == settings.max_iters {
            reports.push(report);
            break;
        }
        let dir = match settings.step_rule {
            StepRule::Plain { .. } => grad.clone(),
            StepRule::Gram { .. } => gram_solve(&pol, &s.ens, &grad)?,
        };
        let slope = grad.dot(&dir);
        let mut eta = settings.step_rule.eta();
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = pol.clone().with_theta(pol.theta() - &dir * eta)?;
            let jc = estimate_cost(p, &cand, &noise, &settings.basis)?;
            if jc.mean <= j.mean - ARMIJO * eta * slope {
                accepted = Some(cand);
                break;
            }
            eta *= 0.5;
        }
        match accepted {
            Some(cand) => {
                report.step = eta;
                reports.push(report);
                pol = cand;
            }
            None => {
                reports.push(report);
                stalled = true;
                break;
            }
        }
    }
    Ok(OptimizeResult {
        policy: pol,
        reports,
        stalled,
    })
}

/// Solves `G d = g` with `G = (1/M) Σ_i Σ_j ρ_{ij} (I_k ⊗ f_{ij} f_{ij}ᵀ) dt`.
fn gram_solve(
    pol: &ControlPolicy,
    ens: &PathEnsemble,
    grad: &DVector<f64>,
) -> Result<DVector<f64>> {
    let grid = *ens.grid();
    let fmap = pol.feature_map();
    let nf = fmap.feature_count();
    let k = pol.control_set().dim();
    let sums = par::sum_paths(ens.paths(), nf * nf, |i, acc| {
        let y = ens.obs_path(i);
        for j in 0..grid.steps() {
            let f = fmap.features(j, &grid, &y[..=j]);
            let w = ens.rho(i, j) * grid.dt();
            for a in 0..nf {
                for b in 0..nf {
                    acc[a * nf + b] += w * f[a] * f[b];
                }
            }
        }
    });
    let mut gram = DMatrix::from_row_slice(nf, nf, &sums) / ens.paths() as f64;
    let lambda = 1e-10 * gram.trace() / nf as f64;
    for a in 0..nf {
        gram[(a, a)] += lambda;
    }
    let chol = gram.cholesky().ok_or(Error::SingularRegression {
        step: 0,
        features: nf,
        samples: ens.paths(),
    })?;
    let mut out = DVector::zeros(k * nf);
    for c in 0..k {
        let block = chol.solve(&grad.rows(c * nf, nf).into_owned());
        out.rows_mut(c * nf, nf).copy_from(&block);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_problem, CoefficientSet, ControlSet, Dimensions};
    use nalgebra::{dmatrix, dvector};

    const C: f64 = 2.0;
    const THETA_STAR: f64 = 0.7;

    fn toy() -> (ProblemInstance, ControlPolicy) {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.0])
            .with_drift_x(|_| dmatrix![0.0])
            .with_drift_u(|_| dmatrix![0.0])
            .with_sigma1_x(|_| dmatrix![0.0])
            .with_sigma1_u(|_| dmatrix![0.0])
            .with_running(|p| C * (p.u[0] - THETA_STAR).powi(2))
            .with_running_x(|_| dvector![0.0])
            .with_running_u(|p| dvector![2.0 * C * (p.u[0] - THETA_STAR)]);
        let p = build_problem("toy", dims, coeffs, ControlSet::unbounded(1)).unwrap();
        let fmap = ObservationFeatureMap::new(vec![], 0).unwrap();
        let pol = ControlPolicy::zero(fmap, ControlSet::unbounded(1));
        (p, pol)
    }

    fn settings(rule: StepRule, max_iters: usize) -> OptimizerSettings {
        OptimizerSettings {
            grid: TimeGrid::new(8, 1.0).unwrap(),
            paths: 200,
            seed: 3,
            max_iters,
            tol: 1e-9,
            step_rule: rule,
            basis: RegressionBasis::default(),
        }
    }

    #[test]
    fn quadratic_toy_gradient_is_exact() {
        let (p, pol) = toy();
        for theta in [0.0, 0.3, 1.5] {
            let pol = pol.clone().with_theta(dvector![theta]).unwrap();
            let noise = Arc::new(sample_noise(TimeGrid::new(8, 1.0).unwrap(), 100, 1));
            let s = solve_all(&p, &pol, &noise, &RegressionBasis::default()).unwrap();
            let g = parameter_gradient(&p, &pol, &s.ens, &s.back, &s.adj).unwrap();
            assert!((g.value[0] - 2.0 * C * (theta - THETA_STAR)).abs() < 1e-12);
            assert!(g.se[0] < 1e-12);
        }
    }

    #[test]
    fn toy_starting_at_optimum_stops_immediately() {
        let (p, pol) = toy();
        let pol = pol.with_theta(dvector![THETA_STAR]).unwrap();
        let out = optimize_policy(&p, pol, &settings(StepRule::Plain { eta: 0.1 }, 10)).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert!(out.reports[0].residual <= 1e-12);
    }

    #[test]
    fn toy_converges_with_plain_steps() {
        let (p, pol) = toy();
        let out = optimize_policy(&p, pol, &settings(StepRule::Plain { eta: 0.1 }, 50)).unwrap();
        assert!(!out.stalled);
        assert!(out.reports.len() <= 51);
        assert!((out.policy.theta()[0] - THETA_STAR).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_problem_has_zero_residual() {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.0])
            .with_drift_x(|_| dmatrix![0.0])
            .with_drift_u(|_| dmatrix![0.0])
            .with_sigma1_x(|_| dmatrix![0.0])
            .with_sigma1_u(|_| dmatrix![0.0]);
        let p = build_problem(
            "zero",
            dims,
            coeffs,
            ControlSet::symmetric_box(1, 1.0).unwrap(),
        )
        .unwrap();
        let fmap = ObservationFeatureMap::default_for(8);
        let pol = ControlPolicy::zero(fmap.clone(), p.control_set.clone());
        let noise = Arc::new(sample_noise(TimeGrid::new(8, 1.0).unwrap(), 300, 2));
        let s = solve_all(&p, &pol, &noise, &RegressionBasis::default()).unwrap();
        let g = parameter_gradient(&p, &pol, &s.ens, &s.back, &s.adj).unwrap();
        assert!(g.value.iter().all(|v| *v == 0.0));
        assert!(g.se.iter().all(|v| *v == 0.0));
        let r =
            necessary_condition_residual(&p, &s.ens, &s.back, &s.adj, &fmap, Ridge::Auto).unwrap();
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn quadratic_running_cost_gives_twice_the_control() {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.0])
            .with_sigma1(|_| dvector![1.0])
            .with_drift_x(|_| dmatrix![0.0])
            .with_drift_u(|_| dmatrix![0.0])
            .with_sigma1_x(|_| dmatrix![0.0])
            .with_sigma1_u(|_| dmatrix![0.0])
            .with_running(|p| p.u[0] * p.u[0])
            .with_running_x(|_| dvector![0.0])
            .with_running_u(|p| dvector![2.0 * p.u[0]]);
        let p = build_problem(
            "l",
            dims,
            coeffs,
            ControlSet::symmetric_box(1, 5.0).unwrap(),
        )
        .unwrap();
        let pol = ControlPolicy::zero(
            ObservationFeatureMap::new(vec![1], 1).unwrap(),
            p.control_set.clone(),
        )
        .with_theta(dvector![0.2, 0.5, 1.0, -0.3])
        .unwrap();
        let noise = Arc::new(sample_noise(TimeGrid::new(8, 1.0).unwrap(), 100, 4));
        let s = solve_all(&p, &pol, &noise, &RegressionBasis::default()).unwrap();
        let g = functional_gradient(&p, &s.ens, &s.back, &s.adj).unwrap();
        for i in 0..100 {
            for j in 0..8 {
                assert_eq!(g.get(i, j)[0], 2.0 * s.ens.u(i, j)[0]);
            }
        }
    }
}
