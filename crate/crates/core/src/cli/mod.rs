//! Command-line entry point.
//!
//! ```text
//! pofbsde <simulate|solve|optimize|verify|benchmark> --config FILE
//!         [--set section.key=value]... [--workers N] [--out DIR]
//! ```
//!
//! Exit codes: 0 on success, 1 when a check fails or the computation
//! errors (with an `error kind=... message=...` line on stderr), 2 on usage
//! or configuration errors.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use crate::benchmark::{oracle_policy_fit, problem_by_name, riccati_oracle, RiccatiOracle};
use crate::bsde::{write_initial_summary, RegressionBasis};
use crate::error::{Error, Result};
use crate::filter::{eval_cost, ObservationFeatureMap};
use crate::optimize::{
    estimate_cost, necessary_condition_residual, optimize_policy, solve_all, OptimizerSettings,
    StepRule,
};
use crate::policy::ControlPolicy;
use crate::problem::ProblemInstance;
use crate::simulate::{
    density_martingale_check, moment_diagnostics, sample_noise, simulate_forward, ConstantControl,
    MomentDiagnostics, TimeGrid,
};
use crate::verify::{
    convexity_spotcheck, cost_identity_check, fd_directional_derivative,
    hamiltonian_gradient_check, perturbation_order_check, write_report, VerifyRow,
};

use config::{Config, PolicyInit, StepRuleName};
use report::{write_gradient_report, write_martingale, write_metrics, write_policy, Artifacts};

#[derive(Debug, Parser)]
#[command(
    name = "pofbsde",
    version,
    about = "Monte Carlo maximum-principle solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set monte_carlo.paths=5000`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
enum Command {
    /// Forward simulation with density and moment diagnostics.
    Simulate,
    /// Forward, backward and adjoint solve with initial-value summaries.
    Solve,
    /// Policy-gradient optimization.
    Optimize,
    /// Every verification check on the configured problem.
    Verify,
    /// LQG end to end: oracle, optimization from the configured policy,
    /// and comparison against the optimal cost.
    Benchmark,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Solve => "solve",
            Command::Optimize => "optimize",
            Command::Verify => "verify",
            Command::Benchmark => "benchmark",
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let Some(path) = cli.config.as_ref() else {
        eprintln!("error kind=ConfigError message=\"--config is required\"");
        return 2;
    };
    let mut cfg = match Config::load(path, &cli.set) {
        Ok(c) => c,
        Err(e) => return fail(&e, 2),
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => return fail(&Error::InvalidArgument(e.to_string()), 2),
    };
    match pool.install(|| execute(cli.command, &cfg)) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e @ Error::Config(_)) => fail(&e, 2),
        Err(e) => fail(&e, 1),
    }
}

fn fail(e: &Error, code: i32) -> i32 {
    eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
    code
}

fn execute(cmd: Command, cfg: &Config) -> Result<bool> {
    let p = build_problem(cfg)?;
    let grid = TimeGrid::new(cfg.grid.steps, p.dims.horizon)?;
    let mut art = Artifacts::create(&cfg.output.dir)?;
    art.manifest(cmd.name(), cfg)?;
    art.note("command", cmd.name());
    art.note("problem", &p.label);
    let pass = match cmd {
        Command::Simulate => simulate(cfg, &p, grid, &mut art)?,
        Command::Solve => solve(cfg, &p, grid, &mut art)?,
        Command::Optimize => optimize(cfg, &p, grid, &mut art, None).map(|_| true)?,
        Command::Verify => verify(cfg, &p, grid, &mut art)?,
        Command::Benchmark => benchmark(cfg, &p, grid, &mut art)?,
    };
    art.note("pass", pass);
    art.finish()?;
    for (k, v) in art.summary_lines() {
        println!("{k} = {v}");
    }
    println!("artifacts in {}", art.dir().display());
    Ok(pass)
}

fn build_problem(cfg: &Config) -> Result<ProblemInstance> {
    match cfg.problem.lqg_spec() {
        Some(spec) => spec.problem(),
        None => problem_by_name(&cfg.problem.name).map_err(|e| Error::Config(e.to_string())),
    }
}

fn basis(cfg: &Config) -> RegressionBasis {
    RegressionBasis::new(cfg.monte_carlo.regression_degree)
}

fn oracle(cfg: &Config, grid: TimeGrid) -> Result<RiccatiOracle> {
    let spec = cfg
        .problem
        .lqg_spec()
        .ok_or_else(|| Error::Config(format!("'{}' is not an LQG problem", cfg.problem.name)))?;
    riccati_oracle(&spec, (10 * grid.steps()).max(10_000))
}

fn build_policy(cfg: &Config, p: &ProblemInstance, grid: TimeGrid) -> Result<ControlPolicy> {
    let offsets = cfg.policy.offsets.clone().unwrap_or_default();
    let fmap = ObservationFeatureMap::new(offsets, cfg.policy.degree)
        .map_err(|e| Error::Config(e.to_string()))?;
    let zero = ControlPolicy::zero(fmap.clone(), p.control_set.clone());
    match cfg.policy.init {
        PolicyInit::Zero => Ok(zero),
        PolicyInit::Constant => {
            let k = p.dims.k;
            if cfg.policy.constant.len() != k {
                return Err(Error::Config(format!(
                    "policy.constant needs {k} values, got {}",
                    cfg.policy.constant.len()
                )));
            }
            let nf = fmap.feature_count();
            let mut theta = DVector::zeros(k * nf);
            for (c, v) in cfg.policy.constant.iter().enumerate() {
                theta[c * nf] = *v;
            }
            zero.with_theta(theta)
        }
        PolicyInit::Oracle => {
            let o = oracle(cfg, grid)?;
            let fit =
                oracle_policy_fit(&o, &fmap, grid, cfg.monte_carlo.paths, cfg.monte_carlo.seed)?;
            Ok(fit.policy)
        }
    }
}

fn note_moments(art: &mut Artifacts, m: &MomentDiagnostics) {
    art.note("sup_x4", m.sup_x4.mean);
    art.note("sup_rho2", m.sup_rho2.mean);
    art.note("sup_rho4", m.sup_rho4.mean);
    art.note("admissibility_control_l4", m.control_l4.mean);
    art.note(
        "admissibility_note",
        "E[(int |u|^2 dt)^2], finite for admissible controls",
    );
}

fn simulate(
    cfg: &Config,
    p: &ProblemInstance,
    grid: TimeGrid,
    art: &mut Artifacts,
) -> Result<bool> {
    let pol = build_policy(cfg, p, grid)?;
    let noise = Arc::new(sample_noise(
        grid,
        cfg.monte_carlo.paths,
        cfg.monte_carlo.seed,
    ));
    let ens = simulate_forward(p, &pol, &noise)?;
    let steps: Vec<usize> = (0..=grid.steps()).collect();
    let checks = density_martingale_check(&ens, &steps);
    art.write("diagnostics.csv", |w| write_martingale(&checks, w))?;
    if cfg.output.write_paths {
        art.write("paths.csv", |w| ens.write_csv(w))?;
    }
    let last = &checks[grid.steps()];
    art.note("rho_T_mean", last.estimate.mean);
    art.note("rho_T_se", last.estimate.se);
    note_moments(art, &moment_diagnostics(&ens));
    Ok(true)
}

fn solve(cfg: &Config, p: &ProblemInstance, grid: TimeGrid, art: &mut Artifacts) -> Result<bool> {
    let pol = build_policy(cfg, p, grid)?;
    let noise = Arc::new(sample_noise(
        grid,
        cfg.monte_carlo.paths,
        cfg.monte_carlo.seed,
    ));
    let s = solve_all(p, &pol, &noise, &basis(cfg))?;
    art.write("initial_summary.csv", |w| {
        write_initial_summary(&s.back, &s.adj, w)
    })?;
    let j = eval_cost(p, &s.ens, &s.back);
    let res = necessary_condition_residual(
        p,
        &s.ens,
        &s.back,
        &s.adj,
        pol.feature_map(),
        basis(cfg).ridge,
    )?;
    art.note("J", j.mean);
    art.note("J_se", j.se);
    art.note("residual", res.total);
    note_moments(art, &moment_diagnostics(&s.ens));
    Ok(true)
}

struct Optimized {
    j: f64,
    residual_ratio: f64,
}

fn optimize(
    cfg: &Config,
    p: &ProblemInstance,
    grid: TimeGrid,
    art: &mut Artifacts,
    pol0: Option<ControlPolicy>,
) -> Result<Optimized> {
    let pol0 = match pol0 {
        Some(p) => p,
        None => build_policy(cfg, p, grid)?,
    };
    let o = &cfg.optimizer;
    let settings = OptimizerSettings {
        grid,
        paths: cfg.monte_carlo.paths,
        seed: cfg.monte_carlo.seed,
        max_iters: o.max_iters,
        tol: o.tol,
        step_rule: match o.step_rule {
            StepRuleName::Plain => StepRule::Plain { eta: o.eta },
            StepRuleName::Gram => StepRule::Gram { eta: o.eta },
        },
        basis: basis(cfg),
    };
    let out = optimize_policy(p, pol0, &settings)?;
    art.write("gradient_report.csv", |w| {
        write_gradient_report(&out.reports, w)
    })?;
    art.write("policy.csv", |w| write_policy(&out.policy, w))?;

    let eval_seed = o.eval_seed.unwrap_or(cfg.monte_carlo.seed);
    let noise = Arc::new(sample_noise(grid, o.eval_paths, eval_seed));
    let j = estimate_cost(p, &out.policy, &noise, &settings.basis)?;
    let ens = simulate_forward(p, &out.policy, &noise)?;
    let first = out.reports.first().map_or(f64::NAN, |r| r.residual);
    let last = out.reports.last().map_or(f64::NAN, |r| r.residual);
    let ratio = if last > 0.0 {
        first / last
    } else {
        f64::INFINITY
    };
    art.note("iterations", out.reports.len() - 1);
    art.note("stalled", out.stalled);
    art.note("J", j.mean);
    art.note("J_se", j.se);
    art.note("residual_initial", first);
    art.note("residual_final", last);
    art.note("residual_ratio", ratio);
    note_moments(art, &moment_diagnostics(&ens));
    Ok(Optimized {
        j: j.mean,
        residual_ratio: ratio,
    })
}

/// A report row passing when `statistic <= tolerance`.
fn row(check: &str, statistic: f64, tolerance: f64, seed: u64) -> VerifyRow {
    VerifyRow {
        check: check.to_string(),
        statistic,
        tolerance,
        pass: statistic <= tolerance,
        seed,
    }
}

fn verify(cfg: &Config, p: &ProblemInstance, grid: TimeGrid, art: &mut Artifacts) -> Result<bool> {
    let v = &cfg.verify;
    let seed = cfg.monte_carlo.seed;
    let paths = cfg.monte_carlo.paths;
    let b = basis(cfg);
    let pol = build_policy(cfg, p, grid)?;
    let mut rows = Vec::new();

    let calc = hamiltonian_gradient_check(p, v.calculus_points, 1e-5, seed)?;
    rows.push(row("hamiltonian_calculus", calc.worst(), 1e-6, seed));

    let noise = Arc::new(sample_noise(grid, paths, seed));
    let ens = simulate_forward(p, &pol, &noise)?;
    let mart = density_martingale_check(&ens, &[grid.steps()]);
    rows.push(row(
        "density_martingale_abs_z",
        mart[0].z.map_or(0.0, f64::abs),
        3.0,
        seed,
    ));

    let nf = pol.feature_map().feature_count();
    let dir = DVector::from_fn(
        pol.param_count(),
        |i, _| if i % nf == 0 { 1.0 } else { 0.0 },
    );
    let fd = fd_directional_derivative(p, &pol, &dir, &v.fd_eps, grid, paths, seed, &b)?;
    rows.push(row(
        "variational_gradient_rel_err",
        fd.rel_err(),
        0.05,
        seed,
    ));

    let k = p.dims.k;
    let u = ConstantControl(DVector::from_element(k, v.identity_controls[0]));
    let ubar = ConstantControl(DVector::from_element(k, v.identity_controls[1]));
    let identity = cost_identity_check(p, &u, &ubar, grid, paths, seed, &b)?;
    rows.push(row(
        "cost_difference_identity_gap",
        identity.gap(),
        identity.tolerance(0.05),
        seed,
    ));

    let pert = perturbation_order_check(p, &pol, &u, &v.perturbation_eps, grid, paths, seed, &b)?;
    rows.push(row(
        "perturbation_x_slope_dev",
        (pert.x_slope - 4.0).abs(),
        0.5,
        seed,
    ));
    if let Some(ys) = pert.y_slope {
        rows.push(row("perturbation_y_slope_dev", (ys - 4.0).abs(), 0.5, seed));
    }
    rows.push(row(
        "perturbation_rho_slope_dev",
        (pert.rho_slope - 2.0).abs(),
        0.4,
        seed,
    ));

    let cx = convexity_spotcheck(p, v.convexity_points, seed, v.sufficient);
    rows.push(row(
        "convexity_violations",
        cx.violations() as f64,
        0.0,
        seed,
    ));
    if let Some(free) = cx.observation_free {
        rows.push(row(
            "hypothesis_h_state_free",
            if free { 0.0 } else { 1.0 },
            0.0,
            seed,
        ));
    }
    if let (Some(lin), true) = (cx.terminal_map_linear, p.dims.m > 0) {
        rows.push(row(
            "hypothesis_phi_linear",
            if lin { 0.0 } else { 1.0 },
            0.0,
            seed,
        ));
    }

    art.write("verify_report.csv", |w| write_report(&rows, w))?;
    let passed = rows.iter().filter(|r| r.pass).count();
    art.note("checks_passed", format!("{passed}/{}", rows.len()));
    for r in rows.iter().filter(|r| !r.pass) {
        art.note("failed", &r.check);
    }
    Ok(passed == rows.len())
}

fn benchmark(
    cfg: &Config,
    p: &ProblemInstance,
    grid: TimeGrid,
    art: &mut Artifacts,
) -> Result<bool> {
    let o = oracle(cfg, grid)?;
    art.write("oracle_curves.csv", |w| o.write_csv(w))?;
    let pol0 = build_policy(cfg, p, grid)?;
    let start = {
        let noise = Arc::new(sample_noise(
            grid,
            cfg.monte_carlo.paths,
            cfg.monte_carlo.seed,
        ));
        estimate_cost(p, &pol0, &noise, &basis(cfg))?
    };
    let res = optimize(cfg, p, grid, art, Some(pol0))?;
    let gap = 100.0 * (res.j - o.j_star) / o.j_star.abs();
    let pass = gap.abs() <= 3.0 && res.residual_ratio >= 10.0;
    art.write("metrics.csv", |w| {
        write_metrics(
            &[
                ("j_star", o.j_star),
                ("j_initial", start.mean),
                ("j_optimized", res.j),
                ("cost_gap_pct", gap),
                ("residual_ratio", res.residual_ratio),
            ],
            w,
        )
    })?;
    art.note("j_star", o.j_star);
    art.note("cost_gap_pct", gap);
    Ok(pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &std::path::Path, body: &str) -> PathBuf {
        let path = dir.join("run.toml");
        std::fs::write(&path, body).unwrap();
        path
    }

    const SMALL: &str = r#"
[problem]
name = "lqg"
[grid]
steps = 8
[monte_carlo]
paths = 400
seed = 3
"#;

    #[test]
    fn missing_config_flag_is_usage_error() {
        assert_eq!(run(["pofbsde", "simulate"]), 2);
        assert_eq!(run(["pofbsde", "frobnicate"]), 2);
    }

    #[test]
    fn missing_seed_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), &SMALL.replace("seed = 3", ""));
        let code = run([
            "pofbsde".into(),
            "simulate".into(),
            "--config".into(),
            cfg.into_os_string(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn simulate_writes_manifest_and_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), SMALL);
        let out = dir.path().join("out");
        let code = run([
            "pofbsde".into(),
            "simulate".into(),
            "--config".into(),
            cfg.into_os_string(),
            "--out".into(),
            out.clone().into_os_string(),
        ]);
        assert_eq!(code, 0);
        let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
        assert!(diag.starts_with("step,t,rho_mean,rho_se,z\n"));
        assert_eq!(diag.lines().count(), 10);
        let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
        assert!(manifest.contains("command = \"simulate\""));
        assert!(manifest.contains("seed = 3"));
        let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
        assert!(summary.contains("admissibility_control_l4 = "));
    }

    #[test]
    fn benchmark_needs_an_lqg_problem() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), &SMALL.replace("\"lqg\"", "\"quadratic_toy\""));
        let code = run([
            "pofbsde".into(),
            "benchmark".into(),
            "--config".into(),
            cfg.into_os_string(),
            "--out".into(),
            dir.path().join("o").into_os_string(),
        ]);
        assert_eq!(code, 2);
    }
}
