//! Replication driver: fresh parameters per replication, shared nuisances
//! across methods, per-method metrics and quantile summaries.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::methods::{method_registry, MethodContext, DEFAULT_METHODS};
use super::metrics::{draw_test, relative_value, rule_accuracy};
use super::{generate_scenario, Assignment, GeneratedData, SimConfig, SimScenario};
use crate::error::{Error, Result};
use crate::model::{AugmentationModel, FitConfig, PropensityModel};
use crate::nuisance::{crossfit_all, ipw_weights, NuisanceConfig, NuisanceEstimates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    /// True propensity and true arm-wise mean outcomes.
    Oracle,
    /// Cross-fitted estimates.
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimNuisance {
    pub mode: NuisanceMode,
    /// Propensity model in estimated mode. When absent, randomized designs use
    /// the known probability 0.5 and confounded designs a logistic fit.
    pub propensity: Option<PropensityModel>,
    pub augmentation: AugmentationModel,
    pub weight_scheme: String,
    pub folds: usize,
}

impl Default for SimNuisance {
    fn default() -> Self {
        Self {
            mode: NuisanceMode::Estimated,
            propensity: None,
            augmentation: AugmentationModel::Ridge,
            weight_scheme: "ipw".into(),
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenarios: Vec<SimConfig>,
    pub methods: Vec<String>,
    pub replications: usize,
    pub seed: u64,
    pub test_size: usize,
    pub fit: FitConfig,
    pub nuisance: SimNuisance,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![SimConfig::default()],
            methods: DEFAULT_METHODS.iter().map(|s| s.to_string()).collect(),
            replications: 100,
            seed: 0,
            test_size: 10_000,
            fit: FitConfig::default(),
            nuisance: SimNuisance::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: usize,
    pub replication: u64,
    pub method: String,
    pub k: usize,
    pub n_per_site: usize,
    pub p: usize,
    pub heterogeneity: String,
    pub covariate_shift: bool,
    pub missing_confounders: bool,
    pub relative_value: Option<f64>,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q1: f64,
    pub mean: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: usize,
    pub method: String,
    pub completed: usize,
    pub failed: usize,
    pub relative_value: Option<Quantiles>,
    pub accuracy: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record([
                "scenario",
                "replication",
                "method",
                "k",
                "n_per_site",
                "p",
                "heterogeneity",
                "covariate_shift",
                "missing_confounders",
                "relative_value",
                "accuracy",
                "error",
            ])?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean relative value of `method` in scenario `scenario`.
    pub fn mean_value(&self, scenario: usize, method: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.scenario == scenario && s.method == method)
            .and_then(|s| s.relative_value.as_ref().map(|q| q.mean))
    }
}

/// Quartiles by linear interpolation between order statistics.
pub fn quantiles(values: &[f64]) -> Option<Quantiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some(Quantiles {
        q1: at(0.25),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        q3: at(0.75),
    })
}

/// True nuisances from the generator, on the estimator's outcome scale.
pub fn oracle_nuisances(gen: &GeneratedData, scenario: &SimScenario) -> Result<Vec<NuisanceEstimates>> {
    gen.data
        .sites()
        .iter()
        .enumerate()
        .map(|(k, site)| {
            let x = &gen.full_x[k];
            let n = site.n();
            let mut pi = DVector::zeros(n);
            let mut a_pos = DVector::zeros(n);
            let mut a_neg = DVector::zeros(n);
            for i in 0..n {
                let xi: Vec<f64> = x.row(i).iter().copied().collect();
                let mu = scenario.main_effect(k, &xi);
                let delta = scenario.true_cate(k, &xi);
                pi[i] = scenario.propensity(&xi);
                a_pos[i] = -(mu + delta);
                a_neg[i] = -(mu - delta);
            }
            let w = ipw_weights(&pi, &site.t);
            NuisanceEstimates::from_parts(pi, a_pos, a_neg, w)
        })
        .collect()
}

fn nuisances_for(
    gen: &GeneratedData,
    scenario: &SimScenario,
    cfg: &SimNuisance,
    seed: u64,
) -> Result<Vec<NuisanceEstimates>> {
    match cfg.mode {
        NuisanceMode::Oracle => oracle_nuisances(gen, scenario),
        NuisanceMode::Estimated => {
            let propensity = cfg.propensity.clone().unwrap_or(match scenario.assignment {
                Assignment::Randomized => PropensityModel::Constant { probability: 0.5 },
                Assignment::Confounded => PropensityModel::default(),
            });
            let ncfg = NuisanceConfig {
                propensity,
                augmentation: cfg.augmentation,
                weight_scheme: cfg.weight_scheme.clone(),
                folds: cfg.folds,
                seed,
            };
            crossfit_all(gen.data.sites(), &ncfg)
        }
    }
}

fn replication_rows(cfg: &ExperimentConfig, scenario_idx: usize, rep: u64) -> Vec<MetricRow> {
    let sc = &cfg.scenarios[scenario_idx];
    let row = |method: &str, outcome: Result<(f64, f64)>| {
        let (rv, acc, err) = match outcome {
            Ok((rv, acc)) => (Some(rv), Some(acc), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        MetricRow {
            scenario: scenario_idx,
            replication: rep,
            method: method.to_string(),
            k: sc.k,
            n_per_site: sc.n_per_site,
            p: sc.p,
            heterogeneity: sc.heterogeneity.as_str().to_string(),
            covariate_shift: sc.covariate_shift,
            missing_confounders: sc.missing_confounders,
            relative_value: rv,
            accuracy: acc,
            error: err,
        }
    };
    let prepared = generate_scenario(sc, cfg.seed, rep).and_then(|(gen, scenario)| {
        let nuis = nuisances_for(&gen, &scenario, &cfg.nuisance, cfg.seed ^ rep)?;
        Ok((gen, scenario, nuis))
    });
    let (gen, scenario, nuis) = match prepared {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            return cfg
                .methods
                .iter()
                .map(|m| row(m, Err(Error::DegenerateData(msg.clone()))))
                .collect();
        }
    };
    let test = draw_test(&scenario, cfg.test_size);
    let registry = method_registry();
    let ctx = MethodContext {
        data: &gen.data,
        nuisances: &nuis,
        fit: &cfg.fit,
        scenario: &scenario,
    };
    cfg.methods
        .iter()
        .map(|name| {
            let outcome = registry.create(name).and_then(|m| m.fit(&ctx)).and_then(|rules| {
                Ok((relative_value(&rules, &test)?, rule_accuracy(&rules, &test)?))
            });
            row(name, outcome)
        })
        .collect()
}

/// Runs every scenario for `replications` replications. Replication `r`
/// of every scenario shares its parameter draw, so variants are paired.
/// Failures inside a replication are recorded in its rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let registry = method_registry();
    for m in &cfg.methods {
        if !registry.contains(m) {
            registry.create(m)?;
        }
    }
    for sc in &cfg.scenarios {
        sc.validate()?;
    }
    cfg.fit.validate()?;
    if cfg.test_size == 0 {
        return Err(Error::InvalidParameter("test_size must be >= 1".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..cfg.scenarios.len())
        .flat_map(|s| (0..cfg.replications as u64).map(move |r| (s, r)))
        .collect();
    let rows: Vec<MetricRow> = jobs
        .par_iter()
        .map(|&(s, r)| replication_rows(cfg, s, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let mut summary = Vec::new();
    for s in 0..cfg.scenarios.len() {
        for m in &cfg.methods {
            let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.scenario == s && &r.method == m).collect();
            let rv: Vec<f64> = mine.iter().filter_map(|r| r.relative_value).collect();
            let acc: Vec<f64> = mine.iter().filter_map(|r| r.accuracy).collect();
            summary.push(SummaryRow {
                scenario: s,
                method: m.clone(),
                completed: rv.len(),
                failed: mine.len() - rv.len(),
                relative_value: quantiles(&rv),
                accuracy: quantiles(&acc),
            });
        }
    }
    Ok(ExperimentResult { rows, summary })
}
