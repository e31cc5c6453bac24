use super::PathEnsemble;
use crate::par;
use crate::stats::Estimate;

/// Mean of `ρ` at one grid node with the z-score of `mean − 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MartingaleCheck {
    pub step: usize,
    pub t: f64,
    pub estimate: Estimate,
    /// `None` when the standard error is not available (single path).
    pub z: Option<f64>,
}

/// Checks `E[ρ(t)] = 1` at the requested grid indices.
pub fn density_martingale_check(ens: &PathEnsemble, steps: &[usize]) -> Vec<MartingaleCheck> {
    steps
        .iter()
        .map(|&j| {
            let rho: Vec<f64> = (0..ens.paths()).map(|i| ens.rho(i, j)).collect();
            let estimate = Estimate::from_samples(&rho);
            MartingaleCheck {
                step: j,
                t: ens.grid().t(j),
                estimate,
                z: estimate.z_score(1.0),
            }
        })
        .collect()
}

/// Moment statistics of an ensemble; sanity diagnostics, not bound checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentDiagnostics {
    /// `E[sup_t |x(t)|⁴]`
    pub sup_x4: Estimate,
    /// `E[sup_t ρ(t)²]`
    pub sup_rho2: Estimate,
    /// `E[sup_t ρ(t)⁴]`
    pub sup_rho4: Estimate,
    /// `E[(∫|u|² dt)²]`, the admissibility statistic of the control.
    pub control_l4: Estimate,
}

pub fn moment_diagnostics(ens: &PathEnsemble) -> MomentDiagnostics {
    let steps = ens.grid().steps();
    let dt = ens.grid().dt();
    let per_path: Vec<[f64; 4]> = par::map_paths(ens.paths(), |i| {
        let mut sx = 0.0f64;
        let mut sr = 0.0f64;
        for j in 0..=steps {
            let nx2: f64 = ens.x(i, j).iter().map(|v| v * v).sum();
            sx = sx.max(nx2 * nx2);
            sr = sr.max(ens.rho(i, j));
        }
        let u2: f64 = (0..steps)
            .map(|j| ens.u(i, j).iter().map(|v| v * v).sum::<f64>() * dt)
            .sum();
        [sx, sr * sr, sr.powi(4), u2 * u2]
    });
    let column = |c: usize| {
        let v: Vec<f64> = per_path.iter().map(|r| r[c]).collect();
        Estimate::from_samples(&v)
    };
    MomentDiagnostics {
        sup_x4: column(0),
        sup_rho2: column(1),
        sup_rho4: column(2),
        control_l4: column(3),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_problem, CoefficientSet, ControlSet, Dimensions};
    use crate::simulate::{sample_noise, simulate_forward, ConstantControl, TimeGrid};
    use nalgebra::dvector;
    use std::sync::Arc;

    fn simulate(h: f64, sigma: f64, u0: f64, paths: usize) -> PathEnsemble {
        let dims = Dimensions::new(1, 0, 1, 2.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![1.5])
            .with_sigma1(move |_| dvector![sigma])
            .with_obs(move |_| h);
        let p = build_problem("d", dims, coeffs, ControlSet::unbounded(1)).unwrap();
        let grid = TimeGrid::new(20, 2.0).unwrap();
        let noise = Arc::new(sample_noise(grid, paths, 4));
        simulate_forward(&p, &ConstantControl(dvector![u0]), &noise).unwrap()
    }

    #[test]
    fn zero_observation_drift_gives_unit_density() {
        let ens = simulate(0.0, 1.0, 0.0, 100);
        for c in density_martingale_check(&ens, &[0, 10, 20]) {
            assert_eq!(c.estimate.mean, 1.0);
            assert_eq!(c.z, Some(0.0));
        }
    }

    #[test]
    fn single_path_has_no_z_score() {
        let ens = simulate(0.5, 1.0, 0.0, 1);
        assert_eq!(density_martingale_check(&ens, &[20])[0].z, None);
    }

    #[test]
    fn deterministic_state_and_constant_control() {
        let ens = simulate(0.0, 0.0, 0.5, 10);
        let d = moment_diagnostics(&ens);
        assert_eq!(d.sup_x4.mean, 1.5f64.powi(4));
        let expected = 0.5f64.powi(4) * 4.0;
        assert!((d.control_l4.mean - expected).abs() < 1e-12);
        assert_eq!(d.sup_rho2.mean, 1.0);
    }
}
