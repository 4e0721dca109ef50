//! Synthetic multi-site benchmark: generator, ground truth, evaluation and
//! the replication driver.
//!
//! Simulated outcomes are larger-is-better; the generator negates them
//! before handing data to the estimators, and all metrics use the original
//! scale.

pub mod experiment;
pub mod methods;
pub mod metrics;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MultiSiteData, SiteDataset};

pub use experiment::{run_experiment, ExperimentConfig, ExperimentResult, MetricRow, NuisanceMode, SimNuisance, SummaryRow};
pub use methods::{method_registry, MethodContext, SimMethod, DEFAULT_METHODS};
pub use metrics::{draw_test, relative_value, rule_accuracy, RuleSet, TestDraw, TestSite};

/// Share of the p features with a nonzero linear coefficient.
pub const LINEAR_SPARSITY: f64 = 0.15;
/// Share of the (p+1)^2 quadratic coefficients that are nonzero.
pub const QUADRATIC_SPARSITY: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    /// Large shared interaction coefficients, small site perturbations.
    Low,
    /// Shared and site-specific parts of equal size.
    Moderate,
    /// Small shared part, large site perturbations.
    High,
}

impl Heterogeneity {
    /// Log-scale means of the base and perturbation interaction magnitudes.
    pub fn interaction_log_means(self) -> (f64, f64) {
        match self {
            Heterogeneity::Low => (5.0, 0.0),
            Heterogeneity::Moderate => (0.0, 0.0),
            Heterogeneity::High => (0.0, 5.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Heterogeneity::Low => "low",
            Heterogeneity::Moderate => "moderate",
            Heterogeneity::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// P(T = 1 | x) = 0.5.
    Randomized,
    /// Logistic in two covariates from the interaction support.
    Confounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub k: usize,
    pub n_per_site: usize,
    pub p: usize,
    pub heterogeneity: Heterogeneity,
    pub covariate_shift: bool,
    pub missing_confounders: bool,
    pub assignment: Assignment,
    /// Include the quadratic main and interaction terms.
    pub quadratic: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k: 3,
            n_per_site: 50,
            p: 100,
            heterogeneity: Heterogeneity::Moderate,
            covariate_shift: false,
            missing_confounders: false,
            assignment: Assignment::Randomized,
            quadratic: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if self.n_per_site < 2 {
            return Err(Error::InvalidParameter("n_per_site must be >= 2".into()));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be >= 1".into()));
        }
        Ok(())
    }
}

/// Nonzero index sets. Linear supports index `0..=p` (0 is the intercept);
/// quadratic supports index the flattened `(p+1) x (p+1)` outer product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supports {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    pub gamma: Vec<usize>,
    pub zeta: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub k: usize,
    pub n_per_site: usize,
    pub p: usize,
    pub alpha_base: DVector<f64>,
    pub beta_base: DVector<f64>,
    pub alpha_perturb: Vec<DVector<f64>>,
    pub beta_perturb: Vec<DVector<f64>>,
    pub signs_alpha: DVector<f64>,
    pub signs_beta: DVector<f64>,
    /// Shared across sites; one copy per site for symmetry with the linear terms.
    pub gamma_quad: Vec<DVector<f64>>,
    pub zeta_quad: Vec<DVector<f64>>,
    pub supports: Supports,
    pub heterogeneity: Heterogeneity,
    pub assignment: Assignment,
    /// Per-site mean shift of the covariates (zeros without shift).
    pub covariate_shift: Vec<DVector<f64>>,
    /// 0-based features withheld from the estimators.
    pub hidden_features: Vec<usize>,
    /// Covariates driving confounded assignment (0-based).
    pub confounders: Vec<usize>,
    pub seed: u64,
    pub replication: u64,
}

#[derive(Clone, Copy)]
enum Purpose {
    Params = 1,
    Shift = 2,
    Data = 3,
    Hidden = 4,
    Test = 5,
}

/// Independent generator streams per (seed, replication, purpose). Separate
/// streams keep scenario variants of one replication paired.
fn stream(seed: u64, replication: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    rng.set_stream(replication);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn sorted_sample(rng: &mut ChaCha8Rng, len: usize, amount: usize) -> Vec<usize> {
    let mut v = sample(rng, len, amount).into_vec();
    v.sort_unstable();
    v
}

/// Intercept plus `round(0.15 p)` features.
fn linear_support(rng: &mut ChaCha8Rng, p: usize) -> Vec<usize> {
    let count = ((LINEAR_SPARSITY * p as f64).round() as usize).min(p);
    let mut s = vec![0];
    s.extend(sorted_sample(rng, p, count).into_iter().map(|j| j + 1));
    s
}

fn quadratic_support(rng: &mut ChaCha8Rng, p: usize) -> Vec<usize> {
    let total = (p + 1) * (p + 1);
    let count = (QUADRATIC_SPARSITY * total as f64).floor() as usize;
    sorted_sample(rng, total, count)
}

fn draw_on(rng: &mut ChaCha8Rng, len: usize, support: &[usize], dist: &LogNormal<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(len);
    for &i in support {
        v[i] = dist.sample(rng);
    }
    v
}

impl SimScenario {
    /// Draws a fresh parameter set.
    pub fn draw(cfg: &SimConfig, seed: u64, replication: u64) -> Result<Self> {
        cfg.validate()?;
        let (k, p) = (cfg.k, cfg.p);
        let mut rng = stream(seed, replication, Purpose::Params);
        let supports = Supports {
            alpha: linear_support(&mut rng, p),
            beta: linear_support(&mut rng, p),
            gamma: quadratic_support(&mut rng, p),
            zeta: quadratic_support(&mut rng, p),
        };
        let rademacher = |rng: &mut ChaCha8Rng| DVector::from_fn(p + 1, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let signs_alpha = rademacher(&mut rng);
        let signs_beta = rademacher(&mut rng);
        let unit = LogNormal::new(0.0, 1.0).expect("valid lognormal");
        let (base_mu, perturb_mu) = cfg.heterogeneity.interaction_log_means();
        let beta_base_dist = LogNormal::new(base_mu, 1.0).expect("valid lognormal");
        let beta_perturb_dist = LogNormal::new(perturb_mu, 1.0).expect("valid lognormal");

        let alpha_base = draw_on(&mut rng, p + 1, &supports.alpha, &unit);
        let beta_base = draw_on(&mut rng, p + 1, &supports.beta, &beta_base_dist);
        let alpha_perturb = (0..k).map(|_| draw_on(&mut rng, p + 1, &supports.alpha, &unit)).collect();
        let beta_perturb = (0..k).map(|_| draw_on(&mut rng, p + 1, &supports.beta, &beta_perturb_dist)).collect();
        let quad_len = (p + 1) * (p + 1);
        let (gamma, zeta) = if cfg.quadratic {
            (
                draw_on(&mut rng, quad_len, &supports.gamma, &unit),
                draw_on(&mut rng, quad_len, &supports.zeta, &unit),
            )
        } else {
            (DVector::zeros(quad_len), DVector::zeros(quad_len))
        };
        let supports = if cfg.quadratic {
            supports
        } else {
            Supports {
                gamma: Vec::new(),
                zeta: Vec::new(),
                ..supports
            }
        };

        let covariate_shift = if cfg.covariate_shift {
            let mut srng = stream(seed, replication, Purpose::Shift);
            (0..k)
                .map(|_| DVector::from_fn(p, |_, _| srng.random_range(-1.0..=1.0)))
                .collect()
        } else {
            vec![DVector::zeros(p); k]
        };

        let truth: Vec<usize> = {
            let mut u: Vec<usize> = supports
                .alpha
                .iter()
                .chain(&supports.beta)
                .filter(|&&j| j > 0)
                .map(|&j| j - 1)
                .collect();
            u.sort_unstable();
            u.dedup();
            u
        };
        let hidden_features = if cfg.missing_confounders && !truth.is_empty() {
            let mut hrng = stream(seed, replication, Purpose::Hidden);
            let count = (truth.len() as f64 / 3.0).round() as usize;
            let mut h: Vec<usize> = sorted_sample(&mut hrng, truth.len(), count)
                .into_iter()
                .map(|i| truth[i])
                .collect();
            h.sort_unstable();
            h
        } else {
            Vec::new()
        };
        let confounders: Vec<usize> = supports.beta.iter().filter(|&&j| j > 0).take(2).map(|&j| j - 1).collect();

        Ok(Self {
            k,
            n_per_site: cfg.n_per_site,
            p,
            alpha_base,
            beta_base,
            alpha_perturb,
            beta_perturb,
            signs_alpha,
            signs_beta,
            gamma_quad: vec![gamma; k],
            zeta_quad: vec![zeta; k],
            supports,
            heterogeneity: cfg.heterogeneity,
            assignment: cfg.assignment,
            covariate_shift,
            hidden_features,
            confounders,
            seed,
            replication,
        })
    }

    /// Site-k main-effect coefficients (intercept first).
    pub fn alpha(&self, k: usize) -> DVector<f64> {
        (&self.alpha_base + &self.alpha_perturb[k]).component_mul(&self.signs_alpha)
    }

    /// Site-k interaction coefficients (intercept first).
    pub fn beta(&self, k: usize) -> DVector<f64> {
        (&self.beta_base + &self.beta_perturb[k]).component_mul(&self.signs_beta)
    }

    /// Features visible to the estimators, in order.
    pub fn visible_features(&self) -> Vec<usize> {
        (0..self.p).filter(|j| self.hidden_features.binary_search(j).is_err()).collect()
    }

    fn quad(&self, coef: &DVector<f64>, support: &[usize], x: &[f64]) -> f64 {
        let w = self.p + 1;
        let xt = |i: usize| if i == 0 { 1.0 } else { x[i - 1] };
        support.iter().map(|&idx| coef[idx] * xt(idx / w) * xt(idx % w)).sum()
    }

    fn linear(coef: &DVector<f64>, x: &[f64]) -> f64 {
        coef[0] + x.iter().zip(coef.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Main effect `<alpha^k, x~> + <gamma^k, z>` on the original scale.
    pub fn main_effect(&self, k: usize, x: &[f64]) -> f64 {
        Self::linear(&self.alpha(k), x) + self.quad(&self.gamma_quad[k], &self.supports.gamma, x)
    }

    /// Treatment effect `<beta^k, x~> + <zeta^k, z>`; outcomes are
    /// `main + t * cate + noise`.
    pub fn true_cate(&self, k: usize, x: &[f64]) -> f64 {
        Self::linear(&self.beta(k), x) + self.quad(&self.zeta_quad[k], &self.supports.zeta, x)
    }

    /// P(T = 1 | x).
    pub fn propensity(&self, x: &[f64]) -> f64 {
        match self.assignment {
            Assignment::Randomized => 0.5,
            Assignment::Confounded => {
                let eta: f64 = 0.5 * self.confounders.iter().map(|&j| x[j]).sum::<f64>();
                1.0 / (1.0 + (-eta).exp())
            }
        }
    }

    fn draw_covariates(&self, rng: &mut ChaCha8Rng, k: usize, n: usize) -> DMatrix<f64> {
        let shift = &self.covariate_shift[k];
        DMatrix::from_fn(n, self.p, |_, j| normal(rng) + shift[j])
    }
}

/// Full-feature training draw with both the observed and the estimator view.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    /// What estimators see: outcomes negated, hidden features removed.
    pub data: MultiSiteData,
    /// All p covariates per site, original outcome scale.
    pub full_x: Vec<DMatrix<f64>>,
}

/// Draws parameters and one training sample.
pub fn generate_scenario(cfg: &SimConfig, seed: u64, replication: u64) -> Result<(GeneratedData, SimScenario)> {
    let scenario = SimScenario::draw(cfg, seed, replication)?;
    let mut rng = stream(seed, replication, Purpose::Data);
    let visible = scenario.visible_features();
    let mut sites = Vec::with_capacity(cfg.k);
    let mut full_x = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        let n = cfg.n_per_site;
        let x = scenario.draw_covariates(&mut rng, k, n);
        let mut t = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let ti = if rng.random_bool(scenario.propensity(&xi)) { 1.0 } else { -1.0 };
            let eps = normal(&mut rng);
            t[i] = ti;
            y[i] = -(scenario.main_effect(k, &xi) + ti * scenario.true_cate(k, &xi) + eps);
        }
        // Guarantee both arms in tiny samples by flipping the first row.
        let (treated, control) = (t.iter().filter(|&&v| v > 0.0).count(), t.iter().filter(|&&v| v < 0.0).count());
        if treated == 0 || control == 0 {
            let xi: Vec<f64> = x.row(0).iter().copied().collect();
            let old = t[0];
            t[0] = -old;
            let cate = scenario.true_cate(k, &xi);
            y[0] -= (t[0] - old) * cate;
        }
        sites.push(SiteDataset::new(k as u32 + 1, y, t, x.select_columns(&visible))?);
        full_x.push(x);
    }
    Ok((
        GeneratedData {
            data: MultiSiteData::new(sites)?,
            full_x,
        },
        scenario,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p: usize) -> SimConfig {
        SimConfig {
            p,
            ..SimConfig::default()
        }
    }

    #[test]
    fn support_sizes() {
        let s = SimScenario::draw(&cfg(100), 1, 0).unwrap();
        let nz = |v: &DVector<f64>| v.iter().skip(1).filter(|&&c| c != 0.0).count();
        for k in 0..3 {
            assert_eq!(nz(&s.alpha(k)), 15);
            assert_eq!(nz(&s.beta(k)), 15);
            assert!(s.alpha(k)[0] != 0.0 && s.beta(k)[0] != 0.0);
            let q = 101 * 101 * 8 / 100;
            assert_eq!(s.gamma_quad[k].iter().filter(|&&c| c != 0.0).count(), q);
            assert_eq!(s.zeta_quad[k].iter().filter(|&&c| c != 0.0).count(), q);
        }
        assert_eq!(s.gamma_quad[0], s.gamma_quad[2]);
    }

    #[test]
    fn interaction_signs_are_coherent() {
        for rep in 0..5 {
            let s = SimScenario::draw(&SimConfig { k: 5, ..cfg(40) }, 7, rep).unwrap();
            for &j in &s.supports.beta {
                for k in 0..5 {
                    assert_eq!(s.beta(k)[j].signum(), s.signs_beta[j]);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_fresh_per_replication() {
        let (a, sa) = generate_scenario(&cfg(20), 3, 1).unwrap();
        let (b, sb) = generate_scenario(&cfg(20), 3, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        let (_, sc) = generate_scenario(&cfg(20), 3, 2).unwrap();
        assert_ne!(sa.supports, sc.supports);
    }

    #[test]
    fn cate_matches_outcome_model_difference() {
        let (_, s) = generate_scenario(&cfg(10), 5, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x: Vec<f64> = (0..10).map(|_| normal(&mut rng)).collect();
            let m = |t: f64| s.main_effect(1, &x) + t * s.true_cate(1, &x);
            assert!(((m(1.0) - m(-1.0)) / 2.0 - s.true_cate(1, &x)).abs() < 1e-9);
        }
    }

    #[test]
    fn cate_at_unit_vector() {
        let mut s = SimScenario::draw(&SimConfig { quadratic: false, ..cfg(4) }, 2, 0).unwrap();
        let b = s.beta(0);
        let e2 = [0.0, 1.0, 0.0, 0.0];
        assert!((s.true_cate(0, &e2) - (b[0] + b[2])).abs() < 1e-12);
        // A single quadratic term on (x2, x2) adds its coefficient at e2.
        s.supports.zeta = vec![2 * 5 + 2];
        s.zeta_quad[0][12] = 0.7;
        assert!((s.true_cate(0, &e2) - (b[0] + b[2] + 0.7)).abs() < 1e-12);
        // Null effect.
        s.beta_base.fill(0.0);
        s.beta_perturb[0].fill(0.0);
        s.zeta_quad[0].fill(0.0);
        assert_eq!(s.true_cate(0, &[0.3, -1.0, 2.0, 0.5]), 0.0);
    }

    #[test]
    fn covariate_marginals() {
        let c = SimConfig { n_per_site: 10_000, k: 1, ..cfg(5) };
        let (g, _) = generate_scenario(&c, 11, 0).unwrap();
        let x = &g.full_x[0];
        let n = x.nrows() as f64;
        for j in 0..5 {
            let col = x.column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 3.0 / n.sqrt());
            // Var of the sample variance of a standard normal is 2/(n-1).
            assert!((var - 1.0).abs() < 3.0 * (2.0 / (n - 1.0)).sqrt());
        }
    }

    #[test]
    fn shift_and_hidden_variants() {
        let base = cfg(30);
        let shifted = SimScenario::draw(&SimConfig { covariate_shift: true, ..base.clone() }, 4, 0).unwrap();
        assert!(shifted.covariate_shift.iter().all(|s| s.iter().all(|v| (-1.0..=1.0).contains(v))));
        assert!(shifted.covariate_shift[0] != shifted.covariate_shift[1]);
        let plain = SimScenario::draw(&base, 4, 0).unwrap();
        // Parameters stay paired across variants.
        assert_eq!(plain.beta(0), shifted.beta(0));

        let (g, s) = generate_scenario(&SimConfig { missing_confounders: true, ..base }, 4, 0).unwrap();
        let mut truth: Vec<usize> = s.supports.alpha.iter().chain(&s.supports.beta).filter(|&&j| j > 0).map(|j| j - 1).collect();
        truth.sort_unstable();
        truth.dedup();
        assert_eq!(s.hidden_features.len(), (truth.len() as f64 / 3.0).round() as usize);
        assert!(s.hidden_features.iter().all(|h| truth.contains(h)));
        assert_eq!(g.data.p(), 30 - s.hidden_features.len());
    }

    #[test]
    fn outcomes_are_negated_for_estimators() {
        let (g, s) = generate_scenario(&SimConfig { k: 1, n_per_site: 200, ..cfg(3) }, 8, 0).unwrap();
        let site = &g.data.sites()[0];
        let x = &g.full_x[0];
        let mut resid = 0.0;
        for i in 0..200 {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let mean = s.main_effect(0, &xi) + site.t[i] * s.true_cate(0, &xi);
            resid += (-site.y[i] - mean).powi(2);
        }
        // What is left is the unit-variance noise.
        assert!((resid / 200.0 - 1.0).abs() < 0.3);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SimScenario::draw(&SimConfig { k: 0, ..cfg(5) }, 0, 0).is_err());
        assert!(SimScenario::draw(&SimConfig { p: 0, ..cfg(5) }, 0, 0).is_err());
    }
}
