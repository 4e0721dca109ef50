//! Shared domain types: site datasets, stacked coefficients and treatment rules.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One site's observations. Outcomes follow the lower-is-better convention.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteDataset {
    pub site_id: u32,
    pub y: DVector<f64>,
    /// Treatment indicators, each exactly -1.0 or +1.0.
    pub t: DVector<f64>,
    /// n x p covariates without an intercept column.
    pub x: DMatrix<f64>,
}

impl SiteDataset {
    /// Builds a site, checking only that the row counts agree.
    pub fn new(site_id: u32, y: DVector<f64>, t: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.len() != t.len() || y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "site {site_id}: y has {} rows, t has {}, x has {}",
                y.len(),
                t.len(),
                x.nrows()
            )));
        }
        Ok(Self { site_id, y, t, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn arm_counts(&self) -> (usize, usize) {
        let treated = self.t.iter().filter(|&&v| v > 0.0).count();
        (treated, self.n() - treated)
    }

    /// Checks treatment coding, finiteness and that both arms are present.
    pub fn validate(&self) -> Result<()> {
        for (row, &v) in self.t.iter().enumerate() {
            if v != 1.0 && v != -1.0 {
                return Err(Error::InvalidTreatment {
                    site_id: self.site_id,
                    row,
                    value: v,
                });
            }
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("site {} outcomes", self.site_id)));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("site {} covariates", self.site_id)));
        }
        let (treated, control) = self.arm_counts();
        if treated == 0 || control == 0 {
            return Err(Error::SingleArm {
                site_id: self.site_id,
            });
        }
        Ok(())
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> SiteDataset {
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i]));
        let t = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.t[i]));
        let x = self.x.select_rows(idx);
        SiteDataset {
            site_id: self.site_id,
            y,
            t,
            x,
        }
    }
}

/// K sites sharing one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSiteData {
    sites: Vec<SiteDataset>,
}

impl MultiSiteData {
    /// Validates and wraps the sites.
    pub fn new(sites: Vec<SiteDataset>) -> Result<Self> {
        validate_multisite(Self { sites })
    }

    pub fn sites(&self) -> &[SiteDataset] {
        &self.sites
    }

    pub fn into_sites(self) -> Vec<SiteDataset> {
        self.sites
    }

    pub fn k(&self) -> usize {
        self.sites.len()
    }

    pub fn p(&self) -> usize {
        self.sites[0].p()
    }

    pub fn total_n(&self) -> usize {
        self.sites.iter().map(SiteDataset::n).sum()
    }
}

/// Returns the input unchanged when every site invariant holds.
pub fn validate_multisite(data: MultiSiteData) -> Result<MultiSiteData> {
    let first = data.sites.first().ok_or(Error::NoSites)?;
    let p = first.p();
    let mut seen = HashSet::new();
    for site in &data.sites {
        if site.p() != p {
            return Err(Error::DimensionMismatch(format!(
                "site {} has {} features, site {} has {}",
                site.site_id,
                site.p(),
                first.site_id,
                p
            )));
        }
        if site.y.len() != site.n() || site.t.len() != site.n() {
            return Err(Error::DimensionMismatch(format!(
                "site {} row counts disagree",
                site.site_id
            )));
        }
        if !seen.insert(site.site_id) {
            return Err(Error::DuplicateSite(site.site_id));
        }
        site.validate()?;
    }
    Ok(data)
}

/// Per-site intercepts plus a p x K matrix whose row j is coordinate block j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedCoefficients {
    pub intercepts: DVector<f64>,
    pub blocks: DMatrix<f64>,
}

impl StackedCoefficients {
    pub fn zeros(p: usize, k: usize) -> Self {
        Self {
            intercepts: DVector::zeros(k),
            blocks: DMatrix::zeros(p, k),
        }
    }

    pub fn k(&self) -> usize {
        self.intercepts.len()
    }

    pub fn p(&self) -> usize {
        self.blocks.nrows()
    }

    /// Coordinate block j: the j-th feature's coefficient in every site.
    pub fn block(&self, j: usize) -> DVector<f64> {
        self.blocks.row(j).transpose()
    }

    pub fn set_block(&mut self, j: usize, values: &DVector<f64>) {
        self.blocks.set_row(j, &values.transpose());
    }

    /// Site k's coefficient vector, intercept first (length p + 1).
    pub fn site(&self, k: usize) -> DVector<f64> {
        let p = self.p();
        let mut out = DVector::zeros(p + 1);
        out[0] = self.intercepts[k];
        out.rows_mut(1, p).copy_from(&self.blocks.column(k));
        out
    }

    /// Stacks per-site vectors (intercept first, all of length p + 1).
    pub fn from_sites(sites: &[DVector<f64>]) -> Result<Self> {
        let first = sites.first().ok_or(Error::NoSites)?;
        if first.is_empty() {
            return Err(Error::DimensionMismatch("empty coefficient vector".into()));
        }
        let p = first.len() - 1;
        let mut out = Self::zeros(p, sites.len());
        for (k, v) in sites.iter().enumerate() {
            if v.len() != p + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "site vector {k} has length {}, expected {}",
                    v.len(),
                    p + 1
                )));
            }
            out.intercepts[k] = v[0];
            out.blocks.column_mut(k).copy_from(&v.rows(1, p));
        }
        Ok(out)
    }

    /// Same coefficient vector in every one of `k` sites.
    pub fn broadcast(site: &DVector<f64>, k: usize) -> Result<Self> {
        Self::from_sites(&vec![site.clone(); k])
    }

    /// Count of non-intercept coefficients with magnitude above `1e-8`.
    pub fn nonzero_count(&self) -> usize {
        self.blocks.iter().filter(|v| v.abs() > NONZERO_EPS).count()
    }

    /// Features whose block has at least one nonzero entry.
    pub fn active_features(&self) -> Vec<usize> {
        (0..self.p())
            .filter(|&j| self.blocks.row(j).iter().any(|&v| v != 0.0))
            .collect()
    }

    pub fn rule(&self, k: usize) -> TreatmentRule {
        TreatmentRule::new(self.site(k))
    }
}

/// Magnitude below which a coefficient counts as zero.
pub const NONZERO_EPS: f64 = 1e-8;

/// Linear scoring rule `d(x) = -sign(b0 + <beta, x>)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRule {
    /// Intercept first, then one coefficient per feature.
    pub coefficients: DVector<f64>,
}

impl TreatmentRule {
    pub fn new(coefficients: DVector<f64>) -> Self {
        Self { coefficients }
    }

    pub fn p(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "rule expects {} covariates, got {}",
                self.p(),
                x.len()
            )));
        }
        let c = &self.coefficients;
        Ok(c[0] + x.iter().enumerate().map(|(j, v)| c[j + 1] * v).sum::<f64>())
    }

    pub fn negated(&self) -> Self {
        Self::new(-&self.coefficients)
    }
}

/// Decision for covariates `x`: -1 when the score is positive or zero, +1 when negative.
pub fn apply_rule(rule: &TreatmentRule, x: &[f64]) -> Result<f64> {
    Ok(decision_from_score(rule.score(x)?))
}

#[inline]
pub fn decision_from_score(f: f64) -> f64 {
    if f < 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Solver, nuisance and tuning settings. Strategy fields hold registry names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// `weighted` or `alearning`.
    pub learner: String,
    /// `coop`, `group` or `none`.
    pub penalty: String,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub max_cycles: usize,
    pub tol: f64,
    pub use_strong_rules: bool,
    /// `ipw` or `energy`.
    pub weight_scheme: String,
    pub crossfit_folds: usize,
    pub seed: u64,
    /// `cic` or `vic`.
    pub criterion: String,
    pub n_gamma: usize,
    pub propensity: PropensityModel,
    pub augmentation: AugmentationModel,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learner: "weighted".into(),
            penalty: "coop".into(),
            n_lambda: 100,
            lambda_min_ratio: 0.01,
            max_cycles: 10_000,
            tol: 1e-7,
            use_strong_rules: true,
            weight_scheme: "ipw".into(),
            crossfit_folds: 5,
            seed: 0,
            criterion: "cic".into(),
            n_gamma: 50,
            propensity: PropensityModel::default(),
            augmentation: AugmentationModel::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambda < 1 {
            return Err(Error::InvalidParameter("n_lambda must be >= 1".into()));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::InvalidParameter(
                "lambda_min_ratio must lie in (0, 1)".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        if self.max_cycles < 1 {
            return Err(Error::InvalidParameter("max_cycles must be >= 1".into()));
        }
        if self.crossfit_folds < 2 {
            return Err(Error::InvalidParameter("crossfit_folds must be >= 2".into()));
        }
        if self.n_gamma < 1 {
            return Err(Error::InvalidParameter("n_gamma must be >= 1".into()));
        }
        Ok(())
    }
}

/// How P(T = 1 | x) is estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PropensityModel {
    /// Ridge-penalized logistic regression, cross-fitted.
    Logistic { penalty: f64 },
    /// Known design probability (randomized assignment).
    Constant { probability: f64 },
}

impl Default for PropensityModel {
    fn default() -> Self {
        Self::Logistic { penalty: 1.0 }
    }
}

/// How the arm-wise outcome regressions `a(t, x)` are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationModel {
    /// Ridge regression with the penalty picked by generalized cross-validation.
    Ridge,
    /// No augmentation: `a = 0`.
    None,
}

impl Default for AugmentationModel {
    fn default() -> Self {
        Self::Ridge
    }
}
