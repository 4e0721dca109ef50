//! Ridge-penalized logistic regression for propensity scores.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const CLIP_LOW: f64 = 0.01;
pub const CLIP_HIGH: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// Intercept first.
    pub coef: DVector<f64>,
    /// True when fitted probabilities were pushed to the boundary, i.e. the
    /// arms are (nearly) separable in the training data.
    pub separated: bool,
    pub iterations: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    /// Newton iterations on `-loglik + (penalty/2)||b||^2`; the intercept is
    /// not penalized. `t` is coded -1/+1.
    pub fn fit(x: &DMatrix<f64>, t: &DVector<f64>, penalty: f64) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        if n != t.len() {
            return Err(Error::DimensionMismatch("logistic: x and t rows differ".into()));
        }
        let treated = t.iter().filter(|&&v| v > 0.0).count();
        if treated == 0 || treated == n {
            return Err(Error::EmptyArm {
                arm: if treated == 0 { 1 } else { -1 },
            });
        }
        if !(penalty >= 0.0) {
            return Err(Error::InvalidParameter("logistic penalty must be >= 0".into()));
        }
        let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let target = t.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let mut coef = DVector::zeros(p + 1);
        let rate = treated as f64 / n as f64;
        coef[0] = (rate / (1.0 - rate)).ln();
        let ridge = penalty.max(1e-8);
        let mut iterations = 0;
        for it in 0..100 {
            iterations = it + 1;
            let eta = &design * &coef;
            let mu = eta.map(sigmoid);
            let wdiag = mu.map(|m| (m * (1.0 - m)).max(1e-10));
            let mut grad = design.transpose() * (&mu - &target);
            let mut hess = design.transpose() * DMatrix::from_diagonal(&wdiag) * &design;
            for j in 1..=p {
                grad[j] += ridge * coef[j];
                hess[(j, j)] += ridge;
            }
            hess[(0, 0)] += 1e-10;
            let step = hess
                .cholesky()
                .ok_or_else(|| Error::Numerical("logistic Hessian not positive definite".into()))?
                .solve(&grad);
            let objective = |c: &DVector<f64>| {
                let eta = &design * c;
                let nll: f64 = eta
                    .iter()
                    .zip(target.iter())
                    .map(|(&e, &y)| {
                        let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                        softplus - y * e
                    })
                    .sum();
                nll + 0.5 * ridge * c.rows(1, p).norm_squared()
            };
            let current = objective(&coef);
            let mut scale = 1.0;
            let mut next = &coef - &step * scale;
            while objective(&next) > current && scale > 1e-8 {
                scale *= 0.5;
                next = &coef - &step * scale;
            }
            let change = (&next - &coef).amax();
            coef = next;
            if change < 1e-10 {
                break;
            }
        }
        let fitted = (&design * &coef).map(sigmoid);
        let separated = fitted.iter().any(|&m| !(1e-6..=1.0 - 1e-6).contains(&m));
        Ok(Self {
            coef,
            separated,
            iterations,
        })
    }

    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        let eta = self.coef[0]
            + x.iter()
                .enumerate()
                .map(|(j, v)| self.coef[j + 1] * v)
                .sum::<f64>();
        sigmoid(eta)
    }

    /// P(T = 1 | x) clipped to `[0.01, 0.99]`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_raw(x).clamp(CLIP_LOW, CLIP_HIGH)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
        x.row(i).iter().copied().collect()
    }

    #[test]
    fn null_model_predicts_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 600;
        let x = DMatrix::from_fn(n, 3, |_, _| StandardNormal.sample(&mut rng));
        let t = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let model = LogisticModel::fit(&x, &t, 1.0).unwrap();
        for i in 0..n {
            assert!((model.predict(&row(&x, i)) - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn monotone_in_predictive_covariate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 400;
        let x = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let t = DVector::from_fn(n, |i, _| {
            let p = sigmoid(2.0 * x[(i, 0)]);
            if rng.random::<f64>() < p { 1.0 } else { -1.0 }
        });
        let model = LogisticModel::fit(&x, &t, 1.0).unwrap();
        let mut last = 0.0;
        for v in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            let p = model.predict_raw(&[v]);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn recovers_logistic_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5000;
        let x = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let truth = |r: &[f64]| sigmoid(0.3 + 0.8 * r[0] - 0.5 * r[1]);
        let t = DVector::from_fn(n, |i, _| {
            if rng.random::<f64>() < truth(&row(&x, i)) { 1.0 } else { -1.0 }
        });
        let model = LogisticModel::fit(&x, &t, 1.0).unwrap();
        let mae: f64 = (0..n)
            .map(|i| (model.predict(&row(&x, i)) - truth(&row(&x, i))).abs())
            .sum::<f64>()
            / n as f64;
        assert!(mae < 0.05, "mae {mae}");
        assert!(!model.separated);
    }

    #[test]
    fn separation_is_flagged_and_clipped() {
        let x = DMatrix::from_row_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let t = DVector::from_row_slice(&[-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
        let model = LogisticModel::fit(&x, &t, 0.0).unwrap();
        assert!(model.separated);
        assert_eq!(model.predict(&[10.0]), CLIP_HIGH);
        assert_eq!(model.predict(&[-10.0]), CLIP_LOW);
        assert!(LogisticModel::fit(&x, &DVector::from_element(6, 1.0), 1.0).is_err());
    }
}
