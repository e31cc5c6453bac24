//! Cross-module properties and end-to-end CLI runs.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::dvector;

use pofbsde::benchmark::{bsde_exponential, riccati_oracle, LqgSpec, OracleLaw};
use pofbsde::bsde::{solve_backward, RegressionBasis, Ridge};
use pofbsde::filter::{bayes_cond_expect, eval_cost, ObservationFeatureMap};
use pofbsde::simulate::{sample_noise, simulate_forward, ConstantControl, TimeGrid};

fn shipped_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/lqg.toml")
}

#[test]
fn oracle_cost_matches_monte_carlo_of_the_oracle_law() {
    let spec = LqgSpec::default();
    let oracle = riccati_oracle(&spec, 10_000).unwrap();
    let p = spec.problem().unwrap();
    let grid = TimeGrid::new(64, 1.0).unwrap();
    let noise = Arc::new(sample_noise(grid, 50_000, 21));
    let ens = simulate_forward(&p, &OracleLaw { oracle: &oracle }, &noise).unwrap();
    let back = solve_backward(&p, &ens, &RegressionBasis::default()).unwrap();
    let j = eval_cost(&p, &ens, &back);
    let z = (j.mean - oracle.j_star) / j.se;
    assert!(
        z.abs() <= 3.0,
        "J = {:?}, J* = {}, z = {z}",
        j,
        oracle.j_star
    );
}

#[test]
fn bayes_regression_tracks_the_kalman_mean() {
    let spec = LqgSpec::default();
    let oracle = riccati_oracle(&spec, 10_000).unwrap();
    let p = spec.problem().unwrap();
    let grid = TimeGrid::new(64, 1.0).unwrap();
    let noise = Arc::new(sample_noise(grid, 100_000, 22));
    let ens = simulate_forward(&p, &ConstantControl(dvector![0.0]), &noise).unwrap();
    let kalman = oracle.filter_ensemble(&ens);
    let fmap = ObservationFeatureMap::new(vec![8, 16, 32, 48], 2).unwrap();
    for j in [8, 32, 64] {
        let x: Vec<f64> = (0..ens.paths()).map(|i| ens.x(i, j)[0]).collect();
        let est = bayes_cond_expect(&x, &ens, j, &fmap, Ridge::Auto).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..ens.paths() {
            let w = ens.rho(i, j);
            num += w * (est.values[i] - kalman[i][j]).powi(2);
            den += w;
        }
        let rms = (num / den).sqrt();
        assert!(rms <= 0.1, "step {j}: rms {rms}");
    }
}

#[test]
fn refining_the_grid_reduces_backward_error() {
    let p = bsde_exponential(1.0, 1.0).unwrap();
    let err = |steps: usize| {
        let grid = TimeGrid::new(steps, 1.0).unwrap();
        let noise = Arc::new(sample_noise(grid, 2_000, 23));
        let ens = simulate_forward(&p, &ConstantControl(dvector![0.0]), &noise).unwrap();
        let back = solve_backward(&p, &ens, &RegressionBasis::default()).unwrap();
        (back.y(0, 0)[0] - (-1.0f64).exp()).abs()
    };
    assert!(err(128) < err(32));
}

#[test]
fn shipped_config_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let code = pofbsde::cli::run([
        "pofbsde".into(),
        "verify".into(),
        "--config".into(),
        shipped_config().into_os_string(),
        "--out".into(),
        dir.path().as_os_str().to_owned(),
    ]);
    assert_eq!(code, 0);
    let report = std::fs::read_to_string(dir.path().join("verify_report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("check,statistic,tolerance,pass,seed"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 7);
    assert!(
        rows.iter().all(|r| r.split(',').nth(3) == Some("true")),
        "{report}"
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let run = || {
        let code = pofbsde::cli::run([
            "pofbsde".into(),
            "optimize".into(),
            "--config".into(),
            shipped_config().into_os_string(),
            "--set".into(),
            "monte_carlo.paths=1500".into(),
            "--set".into(),
            "grid.steps=16".into(),
            "--set".into(),
            "optimizer.max_iters=2".into(),
            "--set".into(),
            "optimizer.eval_paths=1500".into(),
            "--out".into(),
            out.clone().into_os_string(),
        ]);
        assert_eq!(code, 0);
        [
            "gradient_report.csv",
            "policy.csv",
            "manifest.toml",
            "summary.txt",
        ]
        .map(|f| std::fs::read(out.join(f)).unwrap())
    };
    let first = run();
    assert_eq!(first, run());
}

#[test]
fn every_subcommand_runs_on_a_small_problem() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, file) in [
        ("simulate", "diagnostics.csv"),
        ("solve", "initial_summary.csv"),
        ("optimize", "gradient_report.csv"),
    ] {
        let out = dir.path().join(cmd);
        let code = pofbsde::cli::run([
            "pofbsde".into(),
            cmd.into(),
            "--config".into(),
            shipped_config().into_os_string(),
            "--set".into(),
            "problem.name=\"lq_scalar\"".into(),
            "--set".into(),
            "monte_carlo.paths=800".into(),
            "--set".into(),
            "grid.steps=8".into(),
            "--set".into(),
            "optimizer.max_iters=1".into(),
            "--set".into(),
            "optimizer.eval_paths=800".into(),
            "--out".into(),
            out.clone().into_os_string(),
        ]);
        assert_eq!(code, 0, "{cmd}");
        assert!(out.join(file).exists(), "{cmd}");
        assert!(out.join("manifest.toml").exists());
    }
}
