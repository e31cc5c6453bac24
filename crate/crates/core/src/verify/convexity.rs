//! Random midpoint-convexity probes for the sufficient conditions, plus the
//! structural probes `h = h(t)` and `φ` linear.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::hamiltonian::{eval_h, HamiltonianPoint};
use crate::problem::{Point, ProblemInstance};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexityReport {
    pub points: usize,
    /// Midpoint violations of `H` in `(x, y, z₁, z₂, u)` at fixed adjoints.
    pub hamiltonian_violations: usize,
    pub terminal_cost_violations: usize,
    pub initial_cost_violations: usize,
    /// `None` unless the sufficient-condition report was requested; then
    /// whether `h` was found free of `(x, u)`.
    pub observation_free: Option<bool>,
    /// `None` unless requested (or `m = 0`); then whether `φ` passed the
    /// midpoint linearity probe.
    pub terminal_map_linear: Option<bool>,
}

impl ConvexityReport {
    pub fn violations(&self) -> usize {
        self.hamiltonian_violations + self.terminal_cost_violations + self.initial_cost_violations
    }

    /// No violations, and every requested hypothesis probe passed.
    pub fn certified(&self) -> bool {
        self.violations() == 0
            && self.observation_free != Some(false)
            && self.terminal_map_linear != Some(false)
    }
}

fn normal(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian `(x, y, z₁, z₂)` with scale 2 and a control sampled from `U`.
pub(super) fn random_point(p: &ProblemInstance, rng: &mut ChaCha8Rng, t: f64) -> Point {
    let (n, m) = (p.dims.n, p.dims.m);
    Point {
        t,
        x: normal(rng, n, 2.0),
        y: normal(rng, m, 2.0),
        z1: normal(rng, m, 2.0),
        z2: normal(rng, m, 2.0),
        u: p.control_set.sample(rng),
    }
}

/// Standard Gaussian adjoints and `R₂eff` attached to `point`.
pub(super) fn random_adjoints(rng: &mut ChaCha8Rng, point: Point) -> HamiltonianPoint {
    let (n, m) = (point.x.len(), point.y.len());
    HamiltonianPoint {
        p: normal(rng, n, 1.0),
        q1: normal(rng, n, 1.0),
        q2: normal(rng, n, 1.0),
        k: normal(rng, m, 1.0),
        r2_eff: rng.sample(StandardNormal),
        point,
    }
}

/// Relative slack for floating-point midpoint comparisons.
const SLACK: f64 = 1e-9;

fn midpoint_violated(mid: f64, a: f64, b: f64) -> bool {
    mid > 0.5 * (a + b) + SLACK * (1.0 + a.abs() + b.abs())
}

/// Probes `points` random segments. Adjoints and `R₂eff` are drawn once per
/// segment and shared by its endpoints; controls are sampled from `U`.
pub fn convexity_spotcheck(
    p: &ProblemInstance,
    points: usize,
    seed: u64,
    sufficient: bool,
) -> ConvexityReport {
    let dims = p.dims;
    let m = dims.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConvexityReport {
        points,
        hamiltonian_violations: 0,
        terminal_cost_violations: 0,
        initial_cost_violations: 0,
        observation_free: None,
        terminal_map_linear: None,
    };
    let mut h_free = true;
    let mut phi_linear = true;
    for _ in 0..points {
        let t = rng.gen::<f64>() * dims.horizon;
        let a = random_point(p, &mut rng, t);
        let b = random_point(p, &mut rng, t);
        let mid = Point {
            t,
            x: (&a.x + &b.x) * 0.5,
            y: (&a.y + &b.y) * 0.5,
            z1: (&a.z1 + &b.z1) * 0.5,
            z2: (&a.z2 + &b.z2) * 0.5,
            u: (&a.u + &b.u) * 0.5,
        };
        let adj = random_adjoints(&mut rng, a.clone());
        let at = |pt: &Point| {
            let mut hp = adj.clone();
            hp.point = pt.clone();
            eval_h(&hp, &p.coeffs)
        };
        if midpoint_violated(at(&mid), at(&a), at(&b)) {
            report.hamiltonian_violations += 1;
        }
        let c = &p.coeffs;
        if midpoint_violated(
            c.terminal_cost(&mid.x),
            c.terminal_cost(&a.x),
            c.terminal_cost(&b.x),
        ) {
            report.terminal_cost_violations += 1;
        }
        if m > 0 {
            if midpoint_violated(
                c.initial_cost(&mid.y),
                c.initial_cost(&a.y),
                c.initial_cost(&b.y),
            ) {
                report.initial_cost_violations += 1;
            }
            let lin = c.terminal(&mid.x) - (c.terminal(&a.x) + c.terminal(&b.x)) * 0.5;
            let scale = 1.0 + c.terminal(&a.x).amax() + c.terminal(&b.x).amax();
            if lin.amax() > SLACK * scale {
                phi_linear = false;
            }
        }
        if sufficient {
            let (ha, hb) = (c.obs(&a), c.obs(&b));
            if (ha - hb).abs() > SLACK * (1.0 + ha.abs() + hb.abs()) {
                h_free = false;
            }
        }
    }
    if sufficient {
        report.observation_free = Some(h_free);
        report.terminal_map_linear = Some(phi_linear);
    }
    report
}
