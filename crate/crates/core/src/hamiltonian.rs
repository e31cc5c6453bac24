//! The Hamiltonian
//!
//! ```text
//! H = l + ⟨b, p⟩ + ⟨σ₁, q₁⟩ + ⟨σ₂, q₂⟩ + ⟨f, k⟩ + R₂eff · h
//! ```
//!
//! and its partial derivatives. `R₂eff = R₂ − ⟨σ₂, p⟩ − ⟨z₂, k⟩` is formed
//! once by the caller (see [`shifted_r2`]) and treated here as an independent
//! scalar.

use nalgebra::DVector;

use crate::error::Result;
use crate::problem::{CoefficientSet, Point};

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianPoint {
    /// `(t, x, y, z₁, z₂, u)`
    pub point: Point,
    pub p: DVector<f64>,
    pub q1: DVector<f64>,
    pub q2: DVector<f64>,
    pub k: DVector<f64>,
    pub r2_eff: f64,
}

impl HamiltonianPoint {
    /// The point with all adjoint arguments set to zero.
    pub fn without_adjoints(point: Point) -> Self {
        let n = point.x.len();
        let m = point.y.len();
        Self {
            point,
            p: DVector::zeros(n),
            q1: DVector::zeros(n),
            q2: DVector::zeros(n),
            k: DVector::zeros(m),
            r2_eff: 0.0,
        }
    }
}

/// Argument of differentiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Wrt {
    X,
    Y,
    Z1,
    Z2,
    U,
}

impl Wrt {
    pub const ALL: [Wrt; 5] = [Wrt::X, Wrt::Y, Wrt::Z1, Wrt::Z2, Wrt::U];

    pub fn slot(self, pt: &mut Point) -> &mut DVector<f64> {
        match self {
            Wrt::X => &mut pt.x,
            Wrt::Y => &mut pt.y,
            Wrt::Z1 => &mut pt.z1,
            Wrt::Z2 => &mut pt.z2,
            Wrt::U => &mut pt.u,
        }
    }
}

/// `R₂ − ⟨σ₂, p⟩ − ⟨z₂, k⟩`
pub fn shifted_r2(
    r2: f64,
    sigma2: &DVector<f64>,
    p: &DVector<f64>,
    z2: &DVector<f64>,
    k: &DVector<f64>,
) -> f64 {
    r2 - sigma2.dot(p) - z2.dot(k)
}

pub fn eval_h(hp: &HamiltonianPoint, coeffs: &CoefficientSet) -> f64 {
    let pt = &hp.point;
    let mut h = coeffs.running(pt)
        + coeffs.drift(pt).dot(&hp.p)
        + coeffs.sigma1(pt).dot(&hp.q1)
        + coeffs.sigma2(pt).dot(&hp.q2)
        + hp.r2_eff * coeffs.obs(pt);
    if !hp.k.is_empty() {
        h += coeffs.driver(pt).dot(&hp.k);
    }
    h
}

/// Exact partial of `H` at fixed `R₂eff`.
pub fn grad_h(hp: &HamiltonianPoint, coeffs: &CoefficientSet, wrt: Wrt) -> Result<DVector<f64>> {
    let pt = &hp.point;
    let m = hp.k.len();
    let g = match wrt {
        Wrt::X => {
            let mut g = coeffs.running_x(pt)?
                + coeffs.drift_x(pt)?.tr_mul(&hp.p)
                + coeffs.sigma1_x(pt)?.tr_mul(&hp.q1)
                + coeffs.sigma2_x(pt)?.tr_mul(&hp.q2)
                + coeffs.obs_x(pt)? * hp.r2_eff;
            if m > 0 {
                g += coeffs.driver_x(pt)?.tr_mul(&hp.k);
            }
            g
        }
        Wrt::U => {
            let mut g = coeffs.running_u(pt)?
                + coeffs.drift_u(pt)?.tr_mul(&hp.p)
                + coeffs.sigma1_u(pt)?.tr_mul(&hp.q1)
                + coeffs.sigma2_u(pt)?.tr_mul(&hp.q2)
                + coeffs.obs_u(pt)? * hp.r2_eff;
            if m > 0 {
                g += coeffs.driver_u(pt)?.tr_mul(&hp.k);
            }
            g
        }
        Wrt::Y => coeffs.running_y(pt)? + coeffs.driver_y(pt)?.tr_mul(&hp.k),
        Wrt::Z1 => coeffs.running_z1(pt)? + coeffs.driver_z1(pt)?.tr_mul(&hp.k),
        Wrt::Z2 => coeffs.running_z2(pt)? + coeffs.driver_z2(pt)?.tr_mul(&hp.k),
    };
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::problem::Dimensions;
    use nalgebra::{dmatrix, dvector};

    fn scalar() -> CoefficientSet {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        CoefficientSet::new(dims, dvector![0.0])
            .with_running(|p| p.u[0] * p.u[0])
            .with_running_x(|_| dvector![0.0])
            .with_running_y(|_| DVector::zeros(0))
            .with_running_z1(|_| DVector::zeros(0))
            .with_running_z2(|_| DVector::zeros(0))
            .with_running_u(|p| dvector![2.0 * p.u[0]])
            .with_drift(|p| dvector![p.x[0] + p.u[0]])
            .with_drift_x(|_| dmatrix![1.0])
            .with_drift_u(|_| dmatrix![1.0])
    }

    fn at(x: f64, u: f64, p: f64) -> HamiltonianPoint {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        let mut hp = HamiltonianPoint::without_adjoints(Point {
            x: dvector![x],
            u: dvector![u],
            ..Point::zeros(&dims)
        });
        hp.p = dvector![p];
        hp
    }

    #[test]
    fn running_cost_alone_without_adjoints() {
        let c = scalar();
        assert_eq!(eval_h(&at(0.3, 0.5, 0.0), &c), 0.25);
    }

    #[test]
    fn scalar_substitution() {
        let c = scalar();
        assert!((eval_h(&at(0.0, 0.5, 1.0), &c) - 0.75).abs() < 1e-15);
        assert!((grad_h(&at(0.0, 0.5, 1.0), &c, Wrt::U).unwrap()[0] - 2.0).abs() < 1e-15);
        assert_eq!(grad_h(&at(0.0, 0.5, 0.0), &c, Wrt::U).unwrap()[0], 1.0);
    }

    #[test]
    fn missing_partial_is_reported() {
        let dims = Dimensions::new(1, 0, 1, 1.0).unwrap();
        let c = CoefficientSet::new(dims, dvector![0.0]).with_obs(|p| p.x[0].tanh());
        let err = grad_h(&at(0.0, 0.0, 0.0), &c, Wrt::X).unwrap_err();
        assert!(matches!(err, Error::MissingPartial("h_x")));
    }

    #[test]
    fn shift_subtracts_both_pairings() {
        let v = shifted_r2(
            1.0,
            &dvector![2.0],
            &dvector![0.5],
            &dvector![3.0],
            &dvector![0.1],
        );
        assert!((v - (1.0 - 1.0 - 0.3)).abs() < 1e-15);
    }
}
