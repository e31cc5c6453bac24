//! Observation-adapted controls `u_j = proj_U(Θ · features_j)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::ObservationFeatureMap;
use crate::problem::ControlSet;
use crate::simulate::{ControlLaw, TimeGrid};

/// Projected linear-in-features policy. `θ` stores the `k × F` matrix `Θ`
/// row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPolicy {
    fmap: ObservationFeatureMap,
    control_set: ControlSet,
    theta: DVector<f64>,
}

impl ControlPolicy {
    /// The zero policy.
    pub fn zero(fmap: ObservationFeatureMap, control_set: ControlSet) -> Self {
        let len = fmap.feature_count() * control_set.dim();
        Self {
            fmap,
            control_set,
            theta: DVector::zeros(len),
        }
    }

    pub fn with_theta(mut self, theta: DVector<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                what: "policy parameters".into(),
                expected: self.theta.len(),
                got: theta.len(),
            });
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn feature_map(&self) -> &ObservationFeatureMap {
        &self.fmap
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// `Θ · f` before projection.
    pub fn raw(&self, features: &[f64]) -> DVector<f64> {
        let f = features.len();
        DVector::from_fn(self.control_set.dim(), |c, _| {
            self.theta
                .rows(c * f, f)
                .iter()
                .zip(features)
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    pub fn evaluate(&self, step: usize, grid: &TimeGrid, y_prefix: &[f64]) -> DVector<f64> {
        let f = self.fmap.features(step, grid, y_prefix);
        self.control_set.project(&self.raw(&f))
    }

    /// `∂u/∂θ` (`k × kF`). Coordinates clamped by the projection get zero rows.
    pub fn jacobian(&self, step: usize, grid: &TimeGrid, y_prefix: &[f64]) -> DMatrix<f64> {
        let f = self.fmap.features(step, grid, y_prefix);
        let proj = self.control_set.projection_jacobian(&self.raw(&f));
        let k = self.control_set.dim();
        let nf = f.len();
        let mut jac = DMatrix::zeros(k, k * nf);
        for r in 0..k {
            for c in 0..k {
                let w = proj[(r, c)];
                if w != 0.0 {
                    for (a, fv) in f.iter().enumerate() {
                        jac[(r, c * nf + a)] = w * fv;
                    }
                }
            }
        }
        jac
    }

    /// Least-squares fit of `Θ` to target actions, one feature row per sample.
    /// Returns the policy with the RMS error of the unprojected fit.
    pub fn fit(
        fmap: ObservationFeatureMap,
        control_set: ControlSet,
        features: &[Vec<f64>],
        targets: &[DVector<f64>],
    ) -> Result<(Self, f64)> {
        Self::fit_weighted(
            fmap,
            control_set,
            features,
            targets,
            &vec![1.0; features.len()],
        )
    }

    /// As [`ControlPolicy::fit`] with nonnegative row weights; the reported
    /// RMS is weighted the same way.
    pub fn fit_weighted(
        fmap: ObservationFeatureMap,
        control_set: ControlSet,
        features: &[Vec<f64>],
        targets: &[DVector<f64>],
        weights: &[f64],
    ) -> Result<(Self, f64)> {
        let rows = features.len();
        let nf = fmap.feature_count();
        let k = control_set.dim();
        if rows <= nf || targets.len() != rows || weights.len() != rows {
            return Err(Error::SingularRegression {
                step: 0,
                features: nf,
                samples: rows,
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "fit weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let sw: Vec<f64> = weights
            .iter()
            .map(|w| (w * rows as f64 / total).sqrt())
            .collect();
        let design = DMatrix::from_fn(rows, nf, |i, a| sw[i] * features[i][a]);
        let b = DMatrix::from_fn(rows, k, |i, c| sw[i] * targets[i][c]);
        let svd = design.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-12 * smax {
            return Err(Error::SingularRegression {
                step: 0,
                features: nf,
                samples: rows,
            });
        }
        let coef = svd
            .solve(&b, 0.0)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let resid = &design * &coef - &b;
        let rms = (resid.norm_squared() / (rows * k) as f64).sqrt();
        let theta = DVector::from_fn(k * nf, |idx, _| coef[(idx % nf, idx / nf)]);
        Ok((Self::zero(fmap, control_set).with_theta(theta)?, rms))
    }
}

impl ControlLaw for ControlPolicy {
    fn control_dim(&self) -> usize {
        self.control_set.dim()
    }

    fn control(&self, step: usize, grid: &TimeGrid, y_prefix: &[f64]) -> DVector<f64> {
        self.evaluate(step, grid, y_prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(16, 1.0).unwrap()
    }

    fn policy(theta: Vec<f64>) -> ControlPolicy {
        let fmap = ObservationFeatureMap::new(vec![1, 2], 1).unwrap();
        ControlPolicy::zero(fmap, ControlSet::symmetric_box(1, 1.0).unwrap())
            .with_theta(DVector::from_vec(theta))
            .unwrap()
    }

    #[test]
    fn zero_policy_is_zero() {
        let p = policy(vec![0.0; 5]);
        assert_eq!(
            p.evaluate(3, &grid(), &[0.0, 0.3, -0.2, 1.0]),
            DVector::zeros(1)
        );
    }

    #[test]
    fn constant_is_clamped_and_kills_jacobian() {
        let p = policy(vec![5.0, 0.0, 0.0, 0.0, 0.0]);
        let y = [0.0, 0.1, 0.2];
        assert_eq!(p.evaluate(2, &grid(), &y)[0], 1.0);
        assert!(p.jacobian(2, &grid(), &y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn interior_jacobian_is_features() {
        let p = policy(vec![0.1, 0.2, 0.3, -0.1, 0.05]);
        let y = [0.0, 0.1, 0.2, 0.15];
        let f = p.feature_map().features(3, &grid(), &y);
        let jac = p.jacobian(3, &grid(), &y);
        assert_eq!(jac.row(0).iter().copied().collect::<Vec<_>>(), f);
    }

    #[test]
    fn jacobian_matches_finite_differences_in_a_ball() {
        let fmap = ObservationFeatureMap::new(vec![1], 1).unwrap();
        let set = ControlSet::ball(DVector::zeros(2), 0.5).unwrap();
        let theta = DVector::from_vec(vec![0.3, 0.5, -0.2, 0.1, -0.4, 0.7, 0.2, 0.3]);
        let p = ControlPolicy::zero(fmap.clone(), set.clone())
            .with_theta(theta.clone())
            .unwrap();
        let y = [0.0, 0.4, 0.9];
        let jac = p.jacobian(2, &grid(), &y);
        let h = 1e-6;
        for a in 0..theta.len() {
            let mut tp = theta.clone();
            tp[a] += h;
            let mut tm = theta.clone();
            tm[a] -= h;
            let up = ControlPolicy::zero(fmap.clone(), set.clone())
                .with_theta(tp)
                .unwrap();
            let um = ControlPolicy::zero(fmap.clone(), set.clone())
                .with_theta(tm)
                .unwrap();
            let fd = (up.evaluate(2, &grid(), &y) - um.evaluate(2, &grid(), &y)) / (2.0 * h);
            for r in 0..2 {
                assert!((fd[r] - jac[(r, a)]).abs() < 1e-8, "{a} {r}");
            }
        }
    }

    #[test]
    fn fit_recovers_representable_targets() {
        let fmap = ObservationFeatureMap::new(vec![1], 1).unwrap();
        let set = ControlSet::unbounded(1);
        let g = grid();
        let mut feats = Vec::new();
        let mut targets = Vec::new();
        for i in 0..40 {
            let step = 1 + i % 15;
            let y: Vec<f64> = (0..=step)
                .map(|s| ((i + 3 * s) as f64 * 0.37).sin())
                .collect();
            let f = fmap.features(step, &g, &y);
            targets.push(DVector::from_element(1, 0.5 - f[2] + 2.0 * f[3]));
            feats.push(f);
        }
        let (p, rms) = ControlPolicy::fit(fmap, set, &feats, &targets).unwrap();
        assert!(rms < 1e-12);
        assert!((p.theta()[3] - 2.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn output_ignores_future_observations(
            theta in prop::collection::vec(-3.0f64..3.0, 5),
            path in prop::collection::vec(-2.0f64..2.0, 17),
            tail in prop::collection::vec(-2.0f64..2.0, 17),
            step in 0usize..16,
        ) {
            let p = policy(theta);
            let mut mutated = path.clone();
            mutated[step + 1..].copy_from_slice(&tail[step + 1..]);
            prop_assert_eq!(p.evaluate(step, &grid(), &path), p.evaluate(step, &grid(), &mutated));
            prop_assert_eq!(p.jacobian(step, &grid(), &path), p.jacobian(step, &grid(), &mutated));
        }

        #[test]
        fn output_stays_in_the_control_set(
            theta in prop::collection::vec(-10.0f64..10.0, 5),
            path in prop::collection::vec(-5.0f64..5.0, 17),
            step in 0usize..16,
        ) {
            let p = policy(theta);
            let u = p.evaluate(step, &grid(), &path);
            prop_assert!(p.control_set().contains(&u, 0.0));
        }
    }
}
