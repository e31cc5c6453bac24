use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::coeffs::Partial;
use super::{Point, ProblemInstance};

/// Outcome of comparing one analytic partial with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialCheck {
    pub partial: Partial,
    /// `None` when the map was supplied without this partial.
    pub max_rel_error: Option<f64>,
    pub pass: bool,
}

/// Spot check of the declared bound `C` on `|sigma2|` and `|h|`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub declared: f64,
    pub max_sigma2: f64,
    pub max_h: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheckReport {
    pub entries: Vec<PartialCheck>,
    pub bound: Option<BoundCheck>,
}

impl GradientCheckReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass) && self.bound.as_ref().map_or(true, |b| b.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PartialCheck> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn get(&self, partial: Partial) -> Option<&PartialCheck> {
        self.entries.iter().find(|e| e.partial == partial)
    }
}

/// Compares every declared partial against central finite differences at
/// `samples` random points. Relative error is `|analytic - fd| / max(1, |analytic|)`,
/// maximised over entries and samples.
pub fn check_gradients(
    p: &ProblemInstance,
    samples: usize,
    step: f64,
    tol: f64,
    seed: u64,
) -> GradientCheckReport {
    assert!(samples >= 1 && step > 0.0 && tol > 0.0);
    let dims = p.dims;
    let coeffs = &p.coeffs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point> = (0..samples)
        .map(|_| {
            let gauss = |rng: &mut ChaCha8Rng, len: usize| {
                DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
            };
            Point {
                t: rng.gen_range(0.0..=dims.horizon),
                x: gauss(&mut rng, dims.n),
                y: gauss(&mut rng, dims.m),
                z1: gauss(&mut rng, dims.m),
                z2: gauss(&mut rng, dims.m),
                u: p.control_set.sample(&mut rng),
            }
        })
        .collect();

    let entries = Partial::ALL
        .iter()
        .map(|&partial| {
            if !coeffs.has_partial(partial) {
                return PartialCheck {
                    partial,
                    max_rel_error: None,
                    pass: false,
                };
            }
            let mut worst = 0.0f64;
            for pt in &points {
                let analytic = coeffs.eval_partial(partial, pt).expect("partial present");
                let fd =
                    central_difference(pt, step, partial, |q| coeffs.eval_base(partial.base(), q));
                worst = worst.max(max_rel_error(&analytic, &fd));
            }
            PartialCheck {
                partial,
                max_rel_error: Some(worst),
                pass: worst <= tol && worst.is_finite(),
            }
        })
        .collect();

    let bound = coeffs.bound().map(|declared| {
        let mut max_sigma2 = 0.0f64;
        let mut max_h = 0.0f64;
        for pt in &points {
            max_sigma2 = max_sigma2.max(coeffs.sigma2(pt).norm());
            max_h = max_h.max(coeffs.obs(pt).abs());
        }
        BoundCheck {
            declared,
            max_sigma2,
            max_h,
            pass: max_sigma2 <= declared && max_h <= declared,
        }
    });

    GradientCheckReport { entries, bound }
}

fn central_difference(
    pt: &Point,
    step: f64,
    partial: Partial,
    eval: impl Fn(&Point) -> DVector<f64>,
) -> DMatrix<f64> {
    let arg = partial.arg();
    let cols = arg.slot(&mut pt.clone()).len();
    let rows = eval(pt).len();
    let mut jac = DMatrix::zeros(rows, cols);
    let mut probe = pt.clone();
    for c in 0..cols {
        let orig = arg.slot(&mut probe)[c];
        arg.slot(&mut probe)[c] = orig + step;
        let plus = eval(&probe);
        arg.slot(&mut probe)[c] = orig - step;
        let minus = eval(&probe);
        arg.slot(&mut probe)[c] = orig;
        jac.set_column(c, &((plus - minus) / (2.0 * step)));
    }
    jac
}

fn max_rel_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    if analytic.shape() != fd.shape() {
        return f64::INFINITY;
    }
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, f)| (a - f).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}
