//! Propensity scores, outcome augmentation and balancing weights, cross-fitted
//! within each site.

pub mod energy;
pub mod logistic;
pub mod ridge;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{AugmentationModel, FitConfig, PropensityModel, SiteDataset};
use crate::registry::Registry;

pub use energy::{energy_balancing_weights, EnergyOptions, EnergyWeights};
pub use logistic::{LogisticModel, CLIP_HIGH, CLIP_LOW};
pub use ridge::RidgeModel;

/// Per-observation nuisance values for one site.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates {
    /// P(T = 1 | x), clipped to `[0.01, 0.99]`.
    pub pi_hat: DVector<f64>,
    /// Marginal augmentation `pi a(1, x) + (1 - pi) a(-1, x)`.
    pub a_hat: DVector<f64>,
    /// Arm-wise regressions `a(1, x)` and `a(-1, x)`.
    pub a_pos: DVector<f64>,
    pub a_neg: DVector<f64>,
    /// IPW or balancing weights, all positive.
    pub w: DVector<f64>,
    pub fold_id: Vec<usize>,
    /// Folds whose propensity fit hit separation.
    pub separated_folds: Vec<usize>,
}

impl NuisanceEstimates {
    /// Assembles estimates from known components (e.g. simulation truth).
    pub fn from_parts(
        pi_hat: DVector<f64>,
        a_pos: DVector<f64>,
        a_neg: DVector<f64>,
        w: DVector<f64>,
    ) -> Result<Self> {
        let n = pi_hat.len();
        if a_pos.len() != n || a_neg.len() != n || w.len() != n {
            return Err(Error::DimensionMismatch("nuisance components differ in length".into()));
        }
        let a_hat = DVector::from_fn(n, |i, _| marginal_augmentation(pi_hat[i], a_pos[i], a_neg[i]));
        Ok(Self {
            pi_hat,
            a_hat,
            a_pos,
            a_neg,
            w,
            fold_id: vec![0; n],
            separated_folds: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.pi_hat.len()
    }

    /// Arm-wise augmentation `a(d, x_i)` for decision `d`.
    pub fn a_for(&self, i: usize, d: f64) -> f64 {
        if d > 0.0 {
            self.a_pos[i]
        } else {
            self.a_neg[i]
        }
    }
}

/// `pi a1 + (1 - pi) a_neg1`.
pub fn marginal_augmentation(pi_hat: f64, a1: f64, am1: f64) -> f64 {
    pi_hat * a1 + (1.0 - pi_hat) * am1
}

/// `1 / pi(t_i, x_i)`.
pub fn ipw_weights(pi_hat: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(pi_hat.len(), |i, _| {
        if t[i] > 0.0 {
            1.0 / pi_hat[i]
        } else {
            1.0 / (1.0 - pi_hat[i])
        }
    })
}

/// Seeded fold labels stratified by arm: each arm is shuffled and dealt
/// round-robin, the control arm continuing where the treated arm stopped.
pub fn assign_folds(t: &DVector<f64>, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut treated: Vec<usize> = (0..t.len()).filter(|&i| t[i] > 0.0).collect();
    let mut control: Vec<usize> = (0..t.len()).filter(|&i| t[i] <= 0.0).collect();
    treated.shuffle(&mut rng);
    control.shuffle(&mut rng);
    let mut out = vec![0; t.len()];
    for (pos, &i) in treated.iter().chain(control.iter()).enumerate() {
        out[i] = pos % folds;
    }
    out
}

/// Converts fitted propensities into observation weights.
pub trait WeightScheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn weights(&self, site: &SiteDataset, pi_hat: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IpwScheme;

impl WeightScheme for IpwScheme {
    fn name(&self) -> &'static str {
        "ipw"
    }

    fn weights(&self, site: &SiteDataset, pi_hat: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(ipw_weights(pi_hat, &site.t))
    }
}

#[derive(Debug, Clone, Default)]
pub struct EnergyScheme {
    pub options: EnergyOptions,
}

impl WeightScheme for EnergyScheme {
    fn name(&self) -> &'static str {
        "energy"
    }

    fn weights(&self, site: &SiteDataset, _pi_hat: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(energy_balancing_weights(site, &self.options)?.weights)
    }
}

pub fn weight_registry() -> Registry<dyn WeightScheme> {
    let mut reg: Registry<dyn WeightScheme> = Registry::new("weight scheme");
    reg.register("ipw", || Box::new(IpwScheme))
        .register("energy", || Box::new(EnergyScheme::default()));
    reg
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceConfig {
    pub propensity: PropensityModel,
    pub augmentation: AugmentationModel,
    pub weight_scheme: String,
    pub folds: usize,
    pub seed: u64,
}

impl NuisanceConfig {
    pub fn from_fit_config(cfg: &FitConfig) -> Self {
        Self {
            propensity: cfg.propensity.clone(),
            augmentation: cfg.augmentation,
            weight_scheme: cfg.weight_scheme.clone(),
            folds: cfg.crossfit_folds,
            seed: cfg.seed,
        }
    }
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self::from_fit_config(&FitConfig::default())
    }
}

pub enum PropensityFit {
    Logistic(LogisticModel),
    Constant(f64),
}

impl PropensityFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Self::Logistic(m) => m.predict(x),
            Self::Constant(p) => *p,
        }
    }
}

/// Propensity model on a training subset.
pub fn fit_propensity(train: &SiteDataset, model: &PropensityModel) -> Result<PropensityFit> {
    let (treated, control) = train.arm_counts();
    if treated == 0 || control == 0 {
        return Err(Error::SingleArm {
            site_id: train.site_id,
        });
    }
    match *model {
        PropensityModel::Logistic { penalty } => {
            Ok(PropensityFit::Logistic(LogisticModel::fit(&train.x, &train.t, penalty)?))
        }
        PropensityModel::Constant { probability } => {
            if !(probability > 0.0 && probability < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "design propensity {probability} outside (0, 1)"
                )));
            }
            Ok(PropensityFit::Constant(probability.clamp(CLIP_LOW, CLIP_HIGH)))
        }
    }
}

/// Ridge regression of y on x within arm `t` of `train`.
pub fn fit_outcome_regression(train: &SiteDataset, t: f64) -> Result<RidgeModel> {
    let idx: Vec<usize> = (0..train.n()).filter(|&i| train.t[i] == t).collect();
    if idx.is_empty() {
        return Err(Error::EmptyArm { arm: t as i8 });
    }
    let arm = train.subset(&idx);
    RidgeModel::fit(&arm.x, &arm.y)
}

fn row(site: &SiteDataset, i: usize) -> Vec<f64> {
    site.x.row(i).iter().copied().collect()
}

/// Cross-fitted nuisances with seeded, arm-stratified folds.
pub fn crossfit_nuisances(site: &SiteDataset, cfg: &NuisanceConfig) -> Result<NuisanceEstimates> {
    if cfg.folds < 2 {
        return Err(Error::InvalidParameter("cross-fitting needs at least 2 folds".into()));
    }
    if cfg.folds > site.n() {
        return Err(Error::InvalidParameter(format!(
            "{} folds for {} observations",
            cfg.folds,
            site.n()
        )));
    }
    let folds = assign_folds(&site.t, cfg.folds, cfg.seed ^ (site.site_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    crossfit_with_folds(site, &folds, cfg)
}

/// Cross-fitting with explicit fold labels: each row's propensity and
/// augmentation come from models trained on the other folds only.
pub fn crossfit_with_folds(site: &SiteDataset, fold_id: &[usize], cfg: &NuisanceConfig) -> Result<NuisanceEstimates> {
    let n = site.n();
    if fold_id.len() != n {
        return Err(Error::DimensionMismatch("fold labels length".into()));
    }
    let scheme = weight_registry().create(&cfg.weight_scheme)?;
    let n_folds = fold_id.iter().copied().max().map_or(0, |m| m + 1);
    let mut pi_hat = DVector::zeros(n);
    let mut a_pos = DVector::zeros(n);
    let mut a_neg = DVector::zeros(n);
    let mut separated_folds = Vec::new();
    for fold in 0..n_folds {
        let held: Vec<usize> = (0..n).filter(|&i| fold_id[i] == fold).collect();
        if held.is_empty() {
            continue;
        }
        let train_idx: Vec<usize> = (0..n).filter(|&i| fold_id[i] != fold).collect();
        let train = site.subset(&train_idx);
        let (treated, control) = train.arm_counts();
        if treated == 0 || control == 0 {
            return Err(Error::FoldSingleArm { fold });
        }
        let prop = fit_propensity(&train, &cfg.propensity)?;
        if let PropensityFit::Logistic(m) = &prop {
            if m.separated {
                separated_folds.push(fold);
            }
        }
        let (reg_pos, reg_neg) = match cfg.augmentation {
            AugmentationModel::Ridge => (
                Some(fit_outcome_regression(&train, 1.0)?),
                Some(fit_outcome_regression(&train, -1.0)?),
            ),
            AugmentationModel::None => (None, None),
        };
        for &i in &held {
            let xi = row(site, i);
            pi_hat[i] = prop.predict(&xi);
            a_pos[i] = reg_pos.as_ref().map_or(0.0, |m| m.predict(&xi));
            a_neg[i] = reg_neg.as_ref().map_or(0.0, |m| m.predict(&xi));
        }
    }
    let w = scheme.weights(site, &pi_hat)?;
    let mut est = NuisanceEstimates::from_parts(pi_hat, a_pos, a_neg, w)?;
    est.fold_id = fold_id.to_vec();
    est.separated_folds = separated_folds;
    Ok(est)
}

/// Cross-fits every site independently (in parallel), in site order.
pub fn crossfit_all(sites: &[SiteDataset], cfg: &NuisanceConfig) -> Result<Vec<NuisanceEstimates>> {
    use rayon::prelude::*;
    sites.par_iter().map(|s| crossfit_nuisances(s, cfg)).collect()
}
