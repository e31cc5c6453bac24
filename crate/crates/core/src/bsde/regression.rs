//! Least-squares regression across paths, used for every conditional
//! expectation in the crate.
//!
//! Raw regression variables are standardized per cross-section (variables
//! with no spread are dropped), lifted to all monomials up to a total degree,
//! and fitted by ridge-regularized normal equations. The intercept is never
//! penalized, so constant targets are reproduced exactly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::par;

/// Ridge strength for the non-intercept coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ridge {
    /// `1e-8 · trace(XᵀX) / F`
    Auto,
    Fixed(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Auto
    }
}

/// Polynomial basis over the regression state `(x_j, Y_j, log ρ_j)`,
/// optionally extended by lagged observations `Y_{j−s}`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionBasis {
    pub degree: usize,
    pub ridge: Ridge,
    pub obs_lags: Vec<usize>,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self::new(2)
    }
}

impl RegressionBasis {
    pub fn new(degree: usize) -> Self {
        Self {
            degree,
            ridge: Ridge::Auto,
            obs_lags: Vec::new(),
        }
    }

    pub fn with_ridge(mut self, ridge: Ridge) -> Self {
        self.ridge = ridge;
        self
    }

    /// Adds `Y_{j−s}` (clamped at 0) for each lag `s`. A policy reading
    /// lagged observations makes them part of the Markov state.
    pub fn with_obs_lags(mut self, lags: &[usize]) -> Self {
        self.obs_lags = lags.to_vec();
        self
    }
}

/// `C(dim + degree, degree)`, the number of monomials of total degree at most `degree`.
pub fn feature_count(dim: usize, degree: usize) -> usize {
    let mut c = 1usize;
    for i in 1..=degree {
        c = c * (dim + i) / i;
    }
    c
}

/// Exponent vectors of all monomials in `dim` variables with total degree
/// at most `degree`, constant first, graded by degree.
pub fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0; dim]];
    let mut frontier = vec![(vec![0u32; dim], 0usize)];
    for _ in 0..degree {
        let mut next = Vec::new();
        for (e, first) in &frontier {
            // nondecreasing variable index avoids duplicates
            for v in *first..dim {
                let mut f = e.clone();
                f[v] += 1;
                out.push(f.clone());
                next.push((f, v));
            }
        }
        frontier = next;
    }
    out
}

/// A factorized regression on one cross-section of paths.
#[derive(Clone, Debug)]
pub struct Regressor {
    rows: usize,
    cols: usize,
    step: usize,
    /// row-major design matrix including the intercept column
    design: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Regressor {
    /// Builds the polynomial design from raw variables `vars` (row-major,
    /// `rows × dim`) and factorizes its normal matrix. `step` is only used
    /// for error reporting.
    pub fn polynomial(
        vars: &[f64],
        dim: usize,
        degree: usize,
        ridge: Ridge,
        step: usize,
    ) -> Result<Self> {
        let rows = if dim == 0 { 0 } else { vars.len() / dim };
        if dim > 0 && vars.len() != rows * dim {
            return Err(Error::InvalidArgument("ragged regression variables".into()));
        }
        let (active, shift, scale) = standardization(vars, rows, dim);
        let exps = monomial_exponents(active.len(), degree);
        let cols = exps.len();
        let mut design = vec![0.0; rows * cols];
        let mut z = vec![0.0; active.len()];
        for (i, row) in design.chunks_mut(cols).enumerate() {
            for (a, &v) in active.iter().enumerate() {
                z[a] = (vars[i * dim + v] - shift[a]) / scale[a];
            }
            for (slot, e) in row.iter_mut().zip(&exps) {
                *slot = e
                    .iter()
                    .zip(&z)
                    .fold(1.0, |acc, (&p, &zv)| acc * zv.powi(p as i32));
            }
        }
        Self::from_design(design, rows, cols, ridge, step)
    }

    /// Factorizes a design matrix whose first column is the intercept.
    fn from_design(
        design: Vec<f64>,
        rows: usize,
        cols: usize,
        ridge: Ridge,
        step: usize,
    ) -> Result<Self> {
        if rows <= cols {
            return Err(Error::SingularRegression {
                step,
                features: cols,
                samples: rows,
            });
        }
        let chol = factor(&design, rows, cols, None, ridge, step)?;
        Ok(Self {
            rows,
            cols,
            step,
            design,
            chol,
        })
    }

    pub fn samples(&self) -> usize {
        self.rows
    }

    /// Number of active features, intercept included.
    pub fn feature_count(&self) -> usize {
        self.cols
    }

    pub fn coefficients(&self, targets: &[f64]) -> DVector<f64> {
        assert_eq!(targets.len(), self.rows, "one target per path");
        let cols = self.cols;
        let rhs = par::sum_paths(self.rows, cols, |i, acc| {
            let r = &self.design[i * cols..(i + 1) * cols];
            let t = targets[i];
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v * t;
            }
        });
        self.chol.solve(&DVector::from_vec(rhs))
    }

    /// In-sample fitted values for `targets`.
    pub fn fit(&self, targets: &[f64]) -> Vec<f64> {
        let beta = self.coefficients(targets);
        self.predict(&beta)
    }

    /// In-sample fitted values of the least-squares fit of `targets` with
    /// nonnegative per-path `weights`.
    pub fn weighted_fit(&self, weights: &[f64], targets: &[f64], ridge: Ridge) -> Result<Vec<f64>> {
        assert_eq!(weights.len(), self.rows, "one weight per path");
        assert_eq!(targets.len(), self.rows, "one target per path");
        let cols = self.cols;
        let chol = factor(
            &self.design,
            self.rows,
            cols,
            Some(weights),
            ridge,
            self.step,
        )?;
        let rhs = par::sum_paths(self.rows, cols, |i, acc| {
            let r = &self.design[i * cols..(i + 1) * cols];
            let t = weights[i] * targets[i];
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v * t;
            }
        });
        Ok(self.predict(&chol.solve(&DVector::from_vec(rhs))))
    }

    pub fn predict(&self, beta: &DVector<f64>) -> Vec<f64> {
        let cols = self.cols;
        par::map_paths(self.rows, |i| {
            let r = &self.design[i * cols..(i + 1) * cols];
            r.iter().zip(beta.iter()).map(|(a, b)| a * b).sum()
        })
    }
}

/// Cholesky factor of the (optionally weighted) normal matrix, with the
/// ridge added to every non-intercept diagonal entry.
fn factor(
    design: &[f64],
    rows: usize,
    cols: usize,
    weights: Option<&[f64]>,
    ridge: Ridge,
    step: usize,
) -> Result<Cholesky<f64, Dyn>> {
    let gram = par::sum_paths(rows, cols * cols, |i, acc| {
        let r = &design[i * cols..(i + 1) * cols];
        let w = weights.map_or(1.0, |w| w[i]);
        for a in 0..cols {
            let ra = w * r[a];
            for b in a..cols {
                acc[a * cols + b] += ra * r[b];
            }
        }
    });
    let mut a = DMatrix::from_fn(cols, cols, |i, j| {
        if i <= j {
            gram[i * cols + j]
        } else {
            gram[j * cols + i]
        }
    });
    let lambda = match ridge {
        Ridge::Auto => 1e-8 * a.trace() / cols as f64,
        Ridge::Fixed(l) => l,
    };
    for d in 1..cols {
        a[(d, d)] += lambda;
    }
    let singular = || Error::SingularRegression {
        step,
        features: cols,
        samples: rows,
    };
    let max_diag = a.diagonal().max();
    let chol = Cholesky::new(a).ok_or_else(singular)?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v * v));
    if !(min_pivot > 1e-13 * max_diag) {
        return Err(singular());
    }
    Ok(chol)
}

/// Indices of variables with spread, with their means and standard deviations.
fn standardization(vars: &[f64], rows: usize, dim: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    if dim == 0 || rows == 0 {
        return (Vec::new(), Vec::new(), Vec::new());
    }
    let sums = par::sum_paths(rows, dim, |i, acc| {
        for (a, v) in acc.iter_mut().zip(&vars[i * dim..(i + 1) * dim]) {
            *a += v;
        }
    });
    let means: Vec<f64> = sums.iter().map(|s| s / rows as f64).collect();
    let sq = par::sum_paths(rows, dim, |i, acc| {
        for c in 0..dim {
            let d = vars[i * dim + c] - means[c];
            acc[c] += d * d;
        }
    });
    let mut active = Vec::new();
    let mut shift = Vec::new();
    let mut scale = Vec::new();
    for c in 0..dim {
        let sd = (sq[c] / rows as f64).sqrt();
        if sd > 1e-12 * (1.0 + means[c].abs()) {
            active.push(c);
            shift.push(means[c]);
            scale.push(sd);
        }
    }
    (active, shift, scale)
}

/// Least-squares fit of `targets` on `features` (one row per path, an
/// intercept is added) with ridge `lambda` on the non-intercept
/// coefficients. Returns the in-sample fitted values.
pub fn regression_fit(targets: &[f64], features: &[Vec<f64>], lambda: f64) -> Result<Vec<f64>> {
    let rows = features.len();
    if targets.len() != rows {
        return Err(Error::DimensionMismatch {
            what: "regression targets".into(),
            expected: rows,
            got: targets.len(),
        });
    }
    let dim = features.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(rows * dim);
    for f in features {
        if f.len() != dim {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        flat.extend_from_slice(f);
    }
    // degree one in standardized features spans the same space as the raw ones
    let reg = Regressor::polynomial(&flat, dim, 1, Ridge::Fixed(lambda), 0)?;
    Ok(reg.fit(targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn monomial_count_matches_binomial() {
        for dim in 0..5 {
            for d in 0..4 {
                assert_eq!(monomial_exponents(dim, d).len(), feature_count(dim, d));
            }
        }
        assert_eq!(feature_count(3, 2), 10);
    }

    #[test]
    fn constant_targets_are_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let features: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let fitted = regression_fit(&[2.5; 200], &features, 0.0).unwrap();
        assert!(fitted.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn exact_linear_model_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let features: Vec<Vec<f64>> = (0..100)
            .map(|_| vec![rng.gen(), rng.gen::<f64>() * 10.0])
            .collect();
        let targets: Vec<f64> = features
            .iter()
            .map(|f| 1.0 - 2.0 * f[0] + 0.3 * f[1])
            .collect();
        let fitted = regression_fit(&targets, &features, 0.0).unwrap();
        for (a, b) in fitted.iter().zip(&targets) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn noisy_slope_is_within_sampling_error() {
        // OLS slope of y = x + e, x, e ~ N(0, 1): SE ≈ 1/√M
        let m = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let fitted =
            regression_fit(&y, &x.iter().map(|v| vec![*v]).collect::<Vec<_>>(), 0.0).unwrap();
        // slope recovered from two fitted points
        let (i, j) = (0, 1);
        let slope = (fitted[i] - fitted[j]) / (x[i] - x[j]);
        assert!((slope - 1.0).abs() < 4.0 / (m as f64).sqrt(), "{slope}");
    }

    #[test]
    fn collinear_features_are_singular_without_ridge() {
        let features: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let err = regression_fit(&[1.0; 50], &features, 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularRegression { .. }));
        assert!(regression_fit(&[1.0; 50], &features, 1e-6).is_ok());
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let features = vec![vec![1.0], vec![2.0]];
        assert!(regression_fit(&[1.0, 2.0], &features, 0.0).is_err());
    }

    #[test]
    fn degenerate_variables_are_dropped() {
        let vars: Vec<f64> = (0..40).flat_map(|i| [i as f64, 3.0]).collect();
        let reg = Regressor::polynomial(&vars, 2, 2, Ridge::Fixed(0.0), 0).unwrap();
        assert_eq!(reg.feature_count(), 3);
    }
}
