//! Exact Hamiltonian partials against central differences of `H`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::convexity::{random_adjoints, random_point};
use crate::error::Result;
use crate::hamiltonian::{eval_h, grad_h, Wrt};
use crate::problem::ProblemInstance;

#[derive(Clone, Debug, PartialEq)]
pub struct CalculusReport {
    pub points: usize,
    /// Largest `|analytic − fd| / max(1, |analytic|)` per argument, in
    /// [`Wrt::ALL`] order. Arguments of length zero report `0`.
    pub max_rel_err: [f64; 5],
}

impl CalculusReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares [`grad_h`] with central differences of [`eval_h`] with step
/// `step` at `points` random points and adjoints.
pub fn hamiltonian_gradient_check(
    p: &ProblemInstance,
    points: usize,
    step: f64,
    seed: u64,
) -> Result<CalculusReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 5];
    for _ in 0..points {
        let t = rng.gen::<f64>() * p.dims.horizon;
        let point = random_point(p, &mut rng, t);
        let base = random_adjoints(&mut rng, point);
        for (w, wrt) in Wrt::ALL.into_iter().enumerate() {
            let g = grad_h(&base, &p.coeffs, wrt)?;
            for a in 0..g.len() {
                let mut plus = base.clone();
                wrt.slot(&mut plus.point)[a] += step;
                let mut minus = base.clone();
                wrt.slot(&mut minus.point)[a] -= step;
                let fd = (eval_h(&plus, &p.coeffs) - eval_h(&minus, &p.coeffs)) / (2.0 * step);
                let err = (g[a] - fd).abs() / g[a].abs().max(1.0);
                worst[w] = worst[w].max(err);
            }
        }
    }
    Ok(CalculusReport {
        points,
        max_rel_err: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{lq_scalar, LqgSpec};
    use crate::problem::{build_problem, CoefficientSet, ControlSet, Dimensions};
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn quadratic_instances_agree() {
        for p in [LqgSpec::default().problem().unwrap(), lq_scalar().unwrap()] {
            let r = hamiltonian_gradient_check(&p, 100, 1e-5, 1).unwrap();
            assert!(r.worst() <= 1e-6, "{}: {:?}", p.label, r);
        }
    }

    #[test]
    fn wrong_partial_is_caught() {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        let coeffs = CoefficientSet::new(dims, dvector![0.0])
            .with_drift_x(|_| dmatrix![0.0])
            .with_drift_u(|_| dmatrix![0.0])
            .with_sigma1_x(|_| dmatrix![0.0])
            .with_sigma1_u(|_| dmatrix![0.0])
            .with_running(|p| p.u[0].powi(2))
            .with_running_x(|_| dvector![0.0])
            .with_running_u(|p| dvector![3.0 * p.u[0]]);
        let p = build_problem(
            "bad",
            dims,
            coeffs,
            ControlSet::symmetric_box(1, 2.0).unwrap(),
        )
        .unwrap();
        let r = hamiltonian_gradient_check(&p, 20, 1e-5, 2).unwrap();
        assert!(r.max_rel_err[4] > 0.1);
    }
}
