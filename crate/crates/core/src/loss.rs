//! Empirical ITR losses, block gradients and curvature bounds.
//!
//! Both learners reduce to one weighted least-squares form per site,
//! `(1/n) sum_i w_i (y_i - c_i f(x_i))^2`, where `y` is the augmented
//! (residualized) outcome, and
//!
//! * weighted learning uses the balancing/IPW weight `w_i` and `c_i = t_i`;
//! * A-learning uses `w_i = 1` and `c_i = (t_i + 1)/2 - pi(1, x_i)`.
//!
//! Block index 0 is the intercept (a pseudo-feature equal to one); feature
//! `j` of the design is block `j + 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SiteDataset, StackedCoefficients};
use crate::nuisance::NuisanceEstimates;
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Weighted,
    ALearning,
}

/// A site prepared for fitting: augmented outcome, weights and contrasts.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualizedSite {
    pub site_id: u32,
    pub kind: LearnerKind,
    pub x: DMatrix<f64>,
    /// `y - a_hat(x)`.
    pub y: DVector<f64>,
    pub weight: DVector<f64>,
    pub contrast: DVector<f64>,
}

impl ResidualizedSite {
    pub fn weighted(site: &SiteDataset, w: &DVector<f64>, a_hat: &DVector<f64>) -> Result<Self> {
        check_len(site, w.len(), "weights")?;
        check_len(site, a_hat.len(), "augmentation")?;
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "site {}: weights must be positive and finite",
                site.site_id
            )));
        }
        Ok(Self {
            site_id: site.site_id,
            kind: LearnerKind::Weighted,
            x: site.x.clone(),
            y: &site.y - a_hat,
            weight: w.clone(),
            contrast: site.t.clone(),
        })
    }

    pub fn alearning(site: &SiteDataset, pi_hat: &DVector<f64>, a_hat: &DVector<f64>) -> Result<Self> {
        check_len(site, pi_hat.len(), "propensities")?;
        check_len(site, a_hat.len(), "augmentation")?;
        let v = DVector::from_fn(site.n(), |i, _| (site.t[i] + 1.0) / 2.0 - pi_hat[i]);
        if v.iter().any(|&c| !(c > -1.0 && c < 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "site {}: A-learning contrasts must lie in (-1, 1)",
                site.site_id
            )));
        }
        Ok(Self {
            site_id: site.site_id,
            kind: LearnerKind::ALearning,
            x: site.x.clone(),
            y: &site.y - a_hat,
            weight: DVector::from_element(site.n(), 1.0),
            contrast: v,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Covariate column for block `j` (0 = intercept).
    fn column(&self, j: usize) -> Option<nalgebra::DVectorView<'_, f64>> {
        (j > 0).then(|| self.x.column(j - 1))
    }

    /// `f(x_i) = b0 + <b, x_i>` for every row.
    pub fn scores(&self, coef: &DVector<f64>) -> DVector<f64> {
        let p = self.p();
        let mut f = &self.x * coef.rows(1, p);
        f.add_scalar_mut(coef[0]);
        f
    }

    /// `y_i - c_i f(x_i)`.
    pub fn residuals(&self, coef: &DVector<f64>) -> DVector<f64> {
        &self.y - self.contrast.component_mul(&self.scores(coef))
    }

    pub fn loss(&self, coef: &DVector<f64>) -> f64 {
        let r = self.residuals(coef);
        self.weight.dot(&r.component_mul(&r)) / self.n() as f64
    }

    /// `-(2/n) sum_i w_i c_i x_ij r_i` given residuals `r`.
    pub fn grad_from_residuals(&self, j: usize, r: &DVector<f64>) -> f64 {
        let n = self.n() as f64;
        let s: f64 = match self.column(j) {
            None => (0..self.n())
                .map(|i| self.weight[i] * self.contrast[i] * r[i])
                .sum(),
            Some(col) => (0..self.n())
                .map(|i| self.weight[i] * self.contrast[i] * col[i] * r[i])
                .sum(),
        };
        -2.0 * s / n
    }

    pub fn block_grad(&self, coef: &DVector<f64>, j: usize) -> f64 {
        self.grad_from_residuals(j, &self.residuals(coef))
    }

    /// Exact second derivative of the site loss along block `j`:
    /// `(2/n) sum_i w_i c_i^2 x_ij^2`.
    pub fn curvature(&self, j: usize) -> f64 {
        let n = self.n() as f64;
        let s: f64 = match self.column(j) {
            None => (0..self.n())
                .map(|i| self.weight[i] * self.contrast[i].powi(2))
                .sum(),
            Some(col) => (0..self.n())
                .map(|i| self.weight[i] * (self.contrast[i] * col[i]).powi(2))
                .sum(),
        };
        2.0 * s / n
    }
}

fn check_len(site: &SiteDataset, len: usize, what: &str) -> Result<()> {
    if len == site.n() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "site {}: {what} length {len} != n = {}",
            site.site_id,
            site.n()
        )))
    }
}

fn check_dims(data: &[ResidualizedSite], beta: &StackedCoefficients) -> Result<()> {
    if data.len() != beta.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} sites but {} coefficient vectors",
            data.len(),
            beta.k()
        )));
    }
    if let Some(s) = data.iter().find(|s| s.p() != beta.p()) {
        return Err(Error::DimensionMismatch(format!(
            "site {} has {} features, coefficients have {}",
            s.site_id,
            s.p(),
            beta.p()
        )));
    }
    Ok(())
}

fn check_kind(data: &[ResidualizedSite], kind: LearnerKind) -> Result<()> {
    if data.iter().all(|s| s.kind == kind) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "expected {kind:?} sites for this loss"
        )))
    }
}

/// Multi-site loss: sum over sites of each site's normalized loss.
pub fn empirical_loss(data: &[ResidualizedSite], beta: &StackedCoefficients) -> Result<f64> {
    check_dims(data, beta)?;
    Ok(data
        .iter()
        .enumerate()
        .map(|(k, s)| s.loss(&beta.site(k)))
        .sum())
}

pub fn weighted_loss(data: &[ResidualizedSite], beta: &StackedCoefficients) -> Result<f64> {
    check_kind(data, LearnerKind::Weighted)?;
    empirical_loss(data, beta)
}

pub fn alearn_loss(data: &[ResidualizedSite], beta: &StackedCoefficients) -> Result<f64> {
    check_kind(data, LearnerKind::ALearning)?;
    empirical_loss(data, beta)
}

/// Gradient of the multi-site loss with respect to block `j` (length K).
pub fn block_grad(data: &[ResidualizedSite], beta: &StackedCoefficients, j: usize) -> Result<DVector<f64>> {
    check_dims(data, beta)?;
    if j > beta.p() {
        return Err(Error::IndexOutOfRange {
            index: j,
            limit: beta.p() + 1,
        });
    }
    Ok(DVector::from_iterator(
        data.len(),
        data.iter()
            .enumerate()
            .map(|(k, s)| s.block_grad(&beta.site(k), j)),
    ))
}

pub fn weighted_block_grad(
    data: &[ResidualizedSite],
    beta: &StackedCoefficients,
    j: usize,
) -> Result<DVector<f64>> {
    check_kind(data, LearnerKind::Weighted)?;
    block_grad(data, beta, j)
}

pub fn alearn_block_grad(
    data: &[ResidualizedSite],
    beta: &StackedCoefficients,
    j: usize,
) -> Result<DVector<f64>> {
    check_kind(data, LearnerKind::ALearning)?;
    block_grad(data, beta, j)
}

/// Per-block curvature bounds `gamma_j = max_k (2/n^k) sum_i w_i c_i^2 x_ij^2`,
/// index 0 for the intercept. Fails when a block has zero curvature everywhere.
pub fn hessian_majorizer(data: &[ResidualizedSite]) -> Result<DVector<f64>> {
    let first = data.first().ok_or(Error::NoSites)?;
    let p = first.p();
    let mut gamma = DVector::zeros(p + 1);
    for j in 0..=p {
        gamma[j] = data
            .iter()
            .map(|s| s.curvature(j))
            .fold(0.0, f64::max);
        if !(gamma[j] > 0.0) {
            return Err(Error::ZeroCurvature(j));
        }
    }
    Ok(gamma)
}

/// Turns raw site data plus nuisances into the learner's least-squares form.
pub trait Learner: Send + Sync {
    fn name(&self) -> &'static str;
    fn kind(&self) -> LearnerKind;
    fn residualize(&self, site: &SiteDataset, nuis: &NuisanceEstimates) -> Result<ResidualizedSite>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WeightedLearner;

impl Learner for WeightedLearner {
    fn name(&self) -> &'static str {
        "weighted"
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::Weighted
    }

    fn residualize(&self, site: &SiteDataset, nuis: &NuisanceEstimates) -> Result<ResidualizedSite> {
        ResidualizedSite::weighted(site, &nuis.w, &nuis.a_hat)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ALearner;

impl Learner for ALearner {
    fn name(&self) -> &'static str {
        "alearning"
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::ALearning
    }

    fn residualize(&self, site: &SiteDataset, nuis: &NuisanceEstimates) -> Result<ResidualizedSite> {
        ResidualizedSite::alearning(site, &nuis.pi_hat, &nuis.a_hat)
    }
}

pub fn registry() -> Registry<dyn Learner> {
    let mut reg: Registry<dyn Learner> = Registry::new("learner");
    reg.register("weighted", || Box::new(WeightedLearner))
        .register("alearning", || Box::new(ALearner));
    reg
}

pub fn by_name(name: &str) -> Result<Box<dyn Learner>> {
    registry().create(name)
}

pub fn residualize_all(
    learner: &dyn Learner,
    sites: &[SiteDataset],
    nuisances: &[NuisanceEstimates],
) -> Result<Vec<ResidualizedSite>> {
    if sites.len() != nuisances.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sites but {} nuisance sets",
            sites.len(),
            nuisances.len()
        )));
    }
    sites
        .iter()
        .zip(nuisances)
        .map(|(s, n)| learner.residualize(s, n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_residualized, random_stacked};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Naive double loop over sites and rows, written independently of the
    /// vectorized path.
    fn oracle_loss(data: &[ResidualizedSite], beta: &StackedCoefficients) -> f64 {
        let mut total = 0.0;
        for (k, s) in data.iter().enumerate() {
            let mut acc = 0.0;
            for i in 0..s.n() {
                let mut f = beta.intercepts[k];
                for j in 0..s.p() {
                    f += beta.blocks[(j, k)] * s.x[(i, j)];
                }
                let r = s.y[i] - s.contrast[i] * f;
                acc += s.weight[i] * r * r;
            }
            total += acc / s.n() as f64;
        }
        total
    }

    fn site_from(y: &[f64], t: &[f64], x: &[f64], p: usize) -> SiteDataset {
        SiteDataset::new(
            1,
            DVector::from_row_slice(y),
            DVector::from_row_slice(t),
            DMatrix::from_row_slice(y.len(), p, x),
        )
        .unwrap()
    }

    #[test]
    fn zero_coefficients_give_mean_square() {
        let s = site_from(&[1.0, -2.0, 3.0], &[1.0, -1.0, 1.0], &[0.5, 1.0, -1.0], 1);
        let ones = DVector::from_element(3, 1.0);
        let r = ResidualizedSite::weighted(&s, &ones, &DVector::zeros(3)).unwrap();
        let beta = StackedCoefficients::zeros(1, 1);
        let expect = (1.0 + 4.0 + 9.0) / 3.0;
        assert!((weighted_loss(&[r.clone()], &beta).unwrap() - expect).abs() < 1e-14);
        let a = ResidualizedSite::alearning(&s, &DVector::from_element(3, 0.5), &DVector::zeros(3)).unwrap();
        assert!((alearn_loss(&[a], &beta).unwrap() - expect).abs() < 1e-14);
        assert!(alearn_loss(&[r], &beta).is_err());
    }

    #[test]
    fn exact_interpolation() {
        let s = site_from(&[2.0], &[1.0], &[1.0], 1);
        let r = ResidualizedSite::weighted(&s, &DVector::from_element(1, 1.0), &DVector::zeros(1)).unwrap();
        let beta = StackedCoefficients::from_sites(&[DVector::from_row_slice(&[0.0, 2.0])]).unwrap();
        assert_eq!(weighted_loss(&[r], &beta).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_propensity_halves_contrast() {
        let s = site_from(&[3.0], &[1.0], &[2.0], 1);
        let a = ResidualizedSite::alearning(&s, &DVector::from_element(1, 0.5), &DVector::zeros(1)).unwrap();
        assert_eq!(a.contrast[0], 0.5);
        let coef = DVector::from_row_slice(&[0.0, 1.0]);
        assert!((a.loss(&coef) - (3.0f64 - 2.0 / 2.0).powi(2)).abs() < 1e-14);
    }

    #[test]
    fn losses_match_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [LearnerKind::Weighted, LearnerKind::ALearning] {
            for _ in 0..10 {
                let data = random_residualized(&mut rng, kind, 3, &[7, 12, 5], 4);
                let beta = random_stacked(&mut rng, 4, 3);
                let got = empirical_loss(&data, &beta).unwrap();
                assert!((got - oracle_loss(&data, &beta)).abs() < 1e-12 * got.abs().max(1.0));
                let per_site: f64 = data.iter().enumerate().map(|(k, s)| s.loss(&beta.site(k))).sum();
                assert!((got - per_site).abs() < 1e-12 * got.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [LearnerKind::Weighted, LearnerKind::ALearning] {
            let data = random_residualized(&mut rng, kind, 2, &[9, 14], 3);
            let beta = random_stacked(&mut rng, 3, 2);
            for j in 0..=3 {
                let g = block_grad(&data, &beta, j).unwrap();
                for k in 0..2 {
                    let h = 1e-6;
                    let mut plus = beta.clone();
                    let mut minus = beta.clone();
                    if j == 0 {
                        plus.intercepts[k] += h;
                        minus.intercepts[k] -= h;
                    } else {
                        plus.blocks[(j - 1, k)] += h;
                        minus.blocks[(j - 1, k)] -= h;
                    }
                    let fd = (empirical_loss(&data, &plus).unwrap() - empirical_loss(&data, &minus).unwrap()) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-5, "kind {kind:?} j {j} k {k}: {fd} vs {}", g[k]);
                }
            }
        }
        assert!(block_grad(&random_residualized(&mut rng, LearnerKind::Weighted, 1, &[4], 2), &StackedCoefficients::zeros(2, 1), 3).is_err());
    }

    #[test]
    fn doubling_weights_doubles_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random_residualized(&mut rng, LearnerKind::Weighted, 2, &[10, 10], 3);
        let beta = random_stacked(&mut rng, 3, 2);
        let doubled: Vec<_> = data
            .iter()
            .map(|s| ResidualizedSite { weight: &s.weight * 2.0, ..s.clone() })
            .collect();
        for j in 0..=3 {
            let g = block_grad(&data, &beta, j).unwrap();
            let g2 = block_grad(&doubled, &beta, j).unwrap();
            assert_eq!(g * 2.0, g2);
        }
    }

    #[test]
    fn zero_contrast_gives_zero_gradient() {
        let s = site_from(&[1.0, 2.0], &[1.0, -1.0], &[0.3, -0.7], 1);
        let pi = DVector::from_row_slice(&[1.0, 0.0]);
        let a = ResidualizedSite {
            contrast: DVector::from_fn(2, |i, _| (s.t[i] + 1.0) / 2.0 - pi[i]),
            ..ResidualizedSite::alearning(&s, &DVector::from_element(2, 0.5), &DVector::zeros(2)).unwrap()
        };
        let beta = StackedCoefficients::from_sites(&[DVector::from_row_slice(&[0.4, -1.2])]).unwrap();
        for j in 0..=1 {
            assert_eq!(block_grad(&[a.clone()], &beta, j).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn single_site_alearning_normal_equations() {
        // K = 1 closed form: (sum v^2 x x^T) b = sum v x y.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_residualized(&mut rng, LearnerKind::ALearning, 1, &[30], 2);
        let s = &data[0];
        let design = DMatrix::from_fn(s.n(), 3, |i, j| s.contrast[i] * if j == 0 { 1.0 } else { s.x[(i, j - 1)] });
        let b = (design.transpose() * &design)
            .cholesky()
            .unwrap()
            .solve(&(design.transpose() * &s.y));
        let beta = StackedCoefficients::from_sites(&[b]).unwrap();
        for j in 0..=2 {
            assert!(block_grad(&data, &beta, j).unwrap()[0].abs() < 1e-10);
        }
    }

    #[test]
    fn majorizer_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_residualized(&mut rng, LearnerKind::Weighted, 3, &[8, 6, 9], 2);
        let gamma = hessian_majorizer(&data).unwrap();
        for j in 0..=2 {
            let mut best: f64 = 0.0;
            for s in &data {
                let mut acc = 0.0;
                for i in 0..s.n() {
                    let xij = if j == 0 { 1.0 } else { s.x[(i, j - 1)] };
                    acc += s.weight[i] * (s.contrast[i] * xij).powi(2);
                }
                best = best.max(2.0 * acc / s.n() as f64);
            }
            assert!((gamma[j] - best).abs() < 1e-12);
        }
        let single = hessian_majorizer(&data[..1]).unwrap();
        assert!((single[1] - data[0].curvature(1)).abs() < 1e-15);

        // Standardized columns with unit weights: (1/n) sum x^2 = 1, so the bound is 2.
        let x = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let s = SiteDataset::new(1, DVector::zeros(4), DVector::from_row_slice(&[1.0, -1.0, 1.0, -1.0]), x).unwrap();
        let r = ResidualizedSite::weighted(&s, &DVector::from_element(4, 1.0), &DVector::zeros(4)).unwrap();
        assert!((hessian_majorizer(&[r.clone()]).unwrap()[1] - 2.0).abs() < 1e-15);

        let zero_col = ResidualizedSite { x: DMatrix::zeros(4, 1), ..r };
        assert!(matches!(hessian_majorizer(&[zero_col]), Err(Error::ZeroCurvature(1))));
    }

    #[test]
    fn block_majorization_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        use rand::Rng;
        for kind in [LearnerKind::Weighted, LearnerKind::ALearning] {
            let data = random_residualized(&mut rng, kind, 3, &[10, 7, 12], 4);
            let gamma = hessian_majorizer(&data).unwrap();
            for _ in 0..50 {
                let beta = random_stacked(&mut rng, 4, 3);
                let j = rng.random_range(1..=4);
                let u = block_grad(&data, &beta, j).unwrap();
                let step = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
                let mut moved = beta.clone();
                let nb = beta.block(j - 1) + &step;
                moved.set_block(j - 1, &nb);
                let lhs = empirical_loss(&data, &moved).unwrap();
                let rhs = empirical_loss(&data, &beta).unwrap() + u.dot(&step) + 0.5 * gamma[j] * step.norm_squared();
                assert!(lhs <= rhs + 1e-10 * rhs.abs().max(1.0));
            }
        }
    }
}
