//! Ridge regression with the penalty chosen by generalized cross-validation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub intercept: f64,
    pub coef: DVector<f64>,
    pub penalty: f64,
}

/// Penalties `n * 10^e` for `e` in `-6, -5.5, ..., 2`.
fn penalty_grid(n: usize) -> Vec<f64> {
    (0..=16)
        .map(|i| n as f64 * 10f64.powf(-6.0 + 0.5 * i as f64))
        .collect()
}

impl RidgeModel {
    /// Fits `y ~ x` with an unpenalized intercept (columns are centered).
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        if n == 0 {
            return Err(Error::TooFewObservations { needed: 1, got: 0 });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch("ridge: x and y rows differ".into()));
        }
        let x_mean = DVector::from_fn(p, |j, _| x.column(j).mean());
        let y_mean = y.mean();
        let mut xc = x.clone();
        for j in 0..p {
            let m = x_mean[j];
            xc.column_mut(j).add_scalar_mut(-m);
        }
        let yc = y.add_scalar(-y_mean);

        if p == 0 || n == 1 {
            return Ok(Self {
                intercept: y_mean,
                coef: DVector::zeros(p),
                penalty: 0.0,
            });
        }

        let svd = xc.clone().svd(true, true);
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let s = &svd.singular_values;
        let uty = u.transpose() * &yc;
        let nf = n as f64;

        let mut best: Option<(f64, f64)> = None;
        let grid = penalty_grid(n);
        for &lambda in &grid {
            let shrink = s.map(|sv| sv * sv / (sv * sv + lambda));
            let df: f64 = shrink.sum();
            let denom = 1.0 - (df + 1.0) / nf;
            if denom <= 0.0 {
                continue;
            }
            let fitted = u * uty.component_mul(&shrink);
            let rss = (&yc - fitted).norm_squared();
            let gcv = (rss / nf) / (denom * denom);
            // Strict improvement keeps the smallest penalty on ties.
            if best.is_none_or(|(g, _)| gcv < g * (1.0 - 1e-12)) {
                best = Some((gcv, lambda));
            }
        }
        let lambda = best.map_or(*grid.last().expect("nonempty grid"), |(_, l)| l);
        let scale = s.map(|sv| if sv > 0.0 { sv / (sv * sv + lambda) } else { 0.0 });
        let coef = vt.transpose() * uty.component_mul(&scale);
        let intercept = y_mean - x_mean.dot(&coef);
        Ok(Self {
            intercept,
            coef,
            penalty: lambda,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(self.coef.iter()).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(30, 4, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_element(30, 3.5);
        let m = RidgeModel::fit(&x, &y).unwrap();
        for v in [[0.0, 1.0, -2.0, 5.0], [10.0, 10.0, 10.0, 10.0]] {
            assert!((m.predict(&v) - 3.5).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_linear_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, p) = (2000, 10);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let beta = DVector::from_fn(p, |j, _| j as f64 - 4.5);
        let y = (&x * &beta).add_scalar(1.25);
        let m = RidgeModel::fit(&x, &y).unwrap();
        assert!((&m.coef - &beta).amax() < 1e-3);
        assert!((m.intercept - 1.25).abs() < 1e-3);
    }

    #[test]
    fn invariant_to_row_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, p) = (40, 6);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let m = RidgeModel::fit(&x, &y).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let xp = x.select_rows(&perm);
        let yp = DVector::from_fn(n, |i, _| y[perm[i]]);
        let mp = RidgeModel::fit(&xp, &yp).unwrap();
        assert_eq!(m.penalty, mp.penalty);
        assert!((&m.coef - &mp.coef).amax() < 1e-10);
        assert!((m.intercept - mp.intercept).abs() < 1e-10);
    }

    #[test]
    fn wide_and_tiny_designs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(8, 20, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(8, |_, _| StandardNormal.sample(&mut rng));
        let m = RidgeModel::fit(&x, &y).unwrap();
        assert!(m.coef.iter().all(|v| v.is_finite()));
        let one = RidgeModel::fit(&x.rows(0, 1).into_owned(), &y.rows(0, 1).into_owned()).unwrap();
        assert_eq!(one.predict(&[0.0; 20]), y[0]);
        assert!(RidgeModel::fit(&DMatrix::zeros(0, 2), &DVector::zeros(0)).is_err());
    }
}
