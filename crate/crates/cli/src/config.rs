//! JSON run configs. Every field has a default, and the resolved config is
//! echoed into each output so a run can be repeated from its own output.

use std::path::Path;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use coopitr::fedsim::{FedInit, StepBroadcast};
use coopitr::FitConfig;

use crate::error::CliResult;

pub fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

/// Command-line overrides for `FitConfig` fields.
#[derive(Debug, Clone, Default, Args)]
pub struct FitOverrides {
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub penalty: Option<String>,
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub n_lambda: Option<usize>,
    #[arg(long)]
    pub lambda_min_ratio: Option<f64>,
    #[arg(long)]
    pub max_cycles: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Disable strong-rule screening.
    #[arg(long)]
    pub no_strong_rules: bool,
    #[arg(long)]
    pub weight_scheme: Option<String>,
    #[arg(long)]
    pub crossfit_folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_gamma: Option<usize>,
}

impl FitOverrides {
    pub fn apply(&self, cfg: &mut FitConfig) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            };
        }
        set!(learner);
        set!(penalty);
        set!(criterion);
        set!(n_lambda);
        set!(lambda_min_ratio);
        set!(max_cycles);
        set!(tol);
        set!(weight_scheme);
        set!(crossfit_folds);
        set!(seed);
        set!(n_gamma);
        if self.no_strong_rules {
            cfg.use_strong_rules = false;
        }
    }
}

/// Settings for `fedfit`. Without `lambda` the centralized path is fitted
/// first and its selected lambda is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedRunConfig {
    pub fit: FitConfig,
    pub lambda: Option<f64>,
    pub cycles: usize,
    pub init: FedInit,
    pub broadcast: StepBroadcast,
}

impl Default for FedRunConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            lambda: None,
            cycles: 100,
            init: FedInit::LocalFit,
            broadcast: StepBroadcast::PerSite,
        }
    }
}
