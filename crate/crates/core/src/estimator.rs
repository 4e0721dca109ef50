//! End-to-end fit: nuisances, path, criterion scores and adaptive selection.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{self, residualize_all, ResidualizedSite};
use crate::model::{FitConfig, MultiSiteData, StackedCoefficients};
use crate::nuisance::{crossfit_all, NuisanceConfig, NuisanceEstimates};
use crate::penalty;
use crate::solver::{fit_path, PathFit};
use crate::tuning::{self, build_scoring_sites, score_path, PathScores, Selection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub config: FitConfig,
    pub site_ids: Vec<u32>,
    pub path: PathFit,
    pub scores: PathScores,
    pub selection: Selection,
    pub coefficients: StackedCoefficients,
}

/// Prepared least-squares sites for the configured learner.
pub fn prepare_sites(
    data: &MultiSiteData,
    nuisances: &[NuisanceEstimates],
    cfg: &FitConfig,
) -> Result<Vec<ResidualizedSite>> {
    let learner = loss::by_name(&cfg.learner)?;
    residualize_all(learner.as_ref(), data.sites(), nuisances)
}

/// Fits the path and selects lambda, given nuisances.
pub fn fit_with_nuisances(data: &MultiSiteData, nuisances: &[NuisanceEstimates], cfg: &FitConfig) -> Result<ModelFit> {
    cfg.validate()?;
    let penalty = penalty::by_name(&cfg.penalty)?;
    let criterion = tuning::by_name(&cfg.criterion)?;
    let sites = prepare_sites(data, nuisances, cfg)?;
    let path = fit_path(&sites, penalty.as_ref(), cfg)?;
    let scoring = build_scoring_sites(data.sites(), nuisances)?;
    let scores = score_path(&path, &scoring, criterion.as_ref())?;
    let selection = tuning::adaptive_select_scores(&scores, &scores.gamma_grid(cfg.n_gamma))?;
    let coefficients = path.fits[selection.lambda_index].clone();
    Ok(ModelFit {
        config: cfg.clone(),
        site_ids: data.sites().iter().map(|s| s.site_id).collect(),
        path,
        scores,
        selection,
        coefficients,
    })
}

/// Cross-fits nuisances, then fits and selects.
pub fn fit_model(data: &MultiSiteData, cfg: &FitConfig) -> Result<(ModelFit, Vec<NuisanceEstimates>)> {
    cfg.validate()?;
    let nuisances = crossfit_all(data.sites(), &NuisanceConfig::from_fit_config(cfg))?;
    let fit = fit_with_nuisances(data, &nuisances, cfg)?;
    Ok((fit, nuisances))
}
