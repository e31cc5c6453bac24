use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

const DYKSTRA_MAX_ITERS: usize = 10_000;
const DYKSTRA_TOL: f64 = 1e-12;

/// Closed convex control set `U ⊂ ℝᵏ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSet {
    kind: Kind,
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    Ball {
        center: DVector<f64>,
        radius: f64,
    },
    /// `{ v : <a_i, v> <= b_i }`
    HalfSpaces {
        normals: Vec<DVector<f64>>,
        offsets: Vec<f64>,
    },
}

impl ControlSet {
    /// Coordinate box `[lower, upper]`; infinite bounds are allowed.
    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "box bounds".into(),
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower
            .iter()
            .zip(upper.iter())
            .any(|(l, u)| !(l <= u) || l.is_nan())
        {
            return Err(Error::EmptySet("box with lower > upper".into()));
        }
        Ok(Self {
            kind: Kind::Box { lower, upper },
        })
    }

    /// Symmetric box `[-bound, bound]ᵏ`.
    pub fn symmetric_box(k: usize, bound: f64) -> Result<Self> {
        Self::boxed(
            DVector::from_element(k, -bound),
            DVector::from_element(k, bound),
        )
    }

    /// `U = ℝᵏ`.
    pub fn unbounded(k: usize) -> Self {
        Self {
            kind: Kind::Box {
                lower: DVector::from_element(k, f64::NEG_INFINITY),
                upper: DVector::from_element(k, f64::INFINITY),
            },
        }
    }

    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::EmptySet(format!("ball radius {radius}")));
        }
        Ok(Self {
            kind: Kind::Ball { center, radius },
        })
    }

    /// Intersection of half-spaces `<a_i, v> <= b_i`. Emptiness is detected
    /// here by running the projection from the origin and checking feasibility.
    pub fn half_spaces(normals: Vec<DVector<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.is_empty() {
            return Err(Error::InvalidArgument("half-space list is empty".into()));
        }
        if normals.len() != offsets.len() {
            return Err(Error::DimensionMismatch {
                what: "half-space offsets".into(),
                expected: normals.len(),
                got: offsets.len(),
            });
        }
        let k = normals[0].len();
        for a in &normals {
            if a.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "half-space normal".into(),
                    expected: k,
                    got: a.len(),
                });
            }
            if a.norm() == 0.0 {
                return Err(Error::InvalidArgument("zero half-space normal".into()));
            }
        }
        let set = Self {
            kind: Kind::HalfSpaces { normals, offsets },
        };
        let probe = set.project(&DVector::zeros(k));
        if !set.contains(&probe, 1e-7) {
            return Err(Error::EmptySet("inconsistent half-space list".into()));
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            Kind::Box { lower, .. } => lower.len(),
            Kind::Ball { center, .. } => center.len(),
            Kind::HalfSpaces { normals, .. } => normals[0].len(),
        }
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        match &self.kind {
            Kind::Box { lower, upper } => v
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(x, (l, u))| *x >= l - tol && *x <= u + tol),
            Kind::Ball { center, radius } => (v - center).norm() <= radius + tol,
            Kind::HalfSpaces { normals, offsets } => normals
                .iter()
                .zip(offsets)
                .all(|(a, b)| a.dot(v) <= b + tol),
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            Kind::Box { lower, upper } => DVector::from_iterator(
                v.len(),
                v.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(x, (l, u))| x.max(*l).min(*u)),
            ),
            Kind::Ball { center, radius } => {
                let d = v - center;
                let norm = d.norm();
                if norm <= *radius {
                    v.clone()
                } else {
                    center + d * (*radius / norm)
                }
            }
            Kind::HalfSpaces { normals, offsets } => dykstra(normals, offsets, v),
        }
    }

    /// Jacobian of the projection at `v`. Box coordinates that are clamped get
    /// zero rows; on a kink the zero branch is taken.
    pub fn projection_jacobian(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let k = v.len();
        match &self.kind {
            Kind::Box { lower, upper } => DMatrix::from_diagonal(&DVector::from_iterator(
                k,
                v.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(x, (l, u))| if *x >= *l && *x <= *u { 1.0 } else { 0.0 }),
            )),
            Kind::Ball { center, radius } => {
                let d = v - center;
                let norm = d.norm();
                if norm <= *radius {
                    DMatrix::identity(k, k)
                } else {
                    let w = &d / norm;
                    (DMatrix::identity(k, k) - &w * w.transpose()) * (*radius / norm)
                }
            }
            Kind::HalfSpaces { normals, offsets } => {
                let p = dykstra(normals, offsets, v);
                let active: Vec<&DVector<f64>> = normals
                    .iter()
                    .zip(offsets)
                    .filter(|(a, b)| (a.dot(&p) - **b).abs() <= 1e-9 * (1.0 + b.abs()))
                    .map(|(a, _)| a)
                    .collect();
                if active.is_empty() || (&p - v).norm() == 0.0 {
                    return DMatrix::identity(k, k);
                }
                let a = DMatrix::from_fn(active.len(), k, |r, c| active[r][c]);
                let gram = &a * a.transpose();
                match gram.clone().try_inverse() {
                    Some(inv) => DMatrix::identity(k, k) - a.transpose() * inv * &a,
                    None => DMatrix::zeros(k, k),
                }
            }
        }
    }

    /// Draws a point of the set: uniform on bounded boxes, otherwise a uniform
    /// draw on a reference box projected onto the set.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.kind {
            Kind::Box { lower, upper } => DVector::from_iterator(
                lower.len(),
                lower.iter().zip(upper.iter()).map(|(&l, &u)| {
                    let (a, b) = match (l.is_finite(), u.is_finite()) {
                        (true, true) => (l, u),
                        (true, false) => (l, l + 2.0),
                        (false, true) => (u - 2.0, u),
                        (false, false) => (-1.0, 1.0),
                    };
                    if a == b {
                        a
                    } else {
                        rng.gen_range(a..b)
                    }
                }),
            ),
            Kind::Ball { center, radius } => {
                // uniform on the inscribed cube
                let half = radius / (center.len() as f64).sqrt();
                DVector::from_iterator(
                    center.len(),
                    center.iter().map(|&c| {
                        if half > 0.0 {
                            rng.gen_range(c - half..c + half)
                        } else {
                            c
                        }
                    }),
                )
            }
            Kind::HalfSpaces { .. } => {
                let k = self.dim();
                let v = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
                self.project(&v)
            }
        }
    }
}

/// Dykstra's alternating projections onto an intersection of half-spaces.
fn dykstra(normals: &[DVector<f64>], offsets: &[f64], v: &DVector<f64>) -> DVector<f64> {
    let project_one = |a: &DVector<f64>, b: f64, w: &DVector<f64>| -> DVector<f64> {
        let excess = a.dot(w) - b;
        if excess <= 0.0 {
            w.clone()
        } else {
            w - a * (excess / a.norm_squared())
        }
    };
    if normals.len() == 1 {
        return project_one(&normals[0], offsets[0], v);
    }
    let mut x = v.clone();
    let mut corrections = vec![DVector::zeros(v.len()); normals.len()];
    for _ in 0..DYKSTRA_MAX_ITERS {
        let prev = x.clone();
        for (i, (a, &b)) in normals.iter().zip(offsets).enumerate() {
            let w = &x + &corrections[i];
            let next = project_one(a, b, &w);
            corrections[i] = w - &next;
            x = next;
        }
        if (&x - &prev).norm() <= DYKSTRA_TOL * (1.0 + x.norm()) {
            break;
        }
    }
    x
}
