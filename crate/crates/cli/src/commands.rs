use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use coopitr::estimator::{fit_with_nuisances, prepare_sites, ModelFit};
use coopitr::fedsim::{message_accounting, run_federated_fit, FedConfig, RoundCount};
use coopitr::io::load_manifest;
use coopitr::model::{apply_rule, MultiSiteData};
use coopitr::nuisance::{crossfit_all, NuisanceConfig, NuisanceEstimates};
use coopitr::sim::experiment::{run_experiment, ExperimentConfig, SummaryRow};
use coopitr::tuning::{aipw_concordance, aipw_value, build_scoring_sites, normalize, total_variation, PathScores};
use coopitr::{FitConfig, StackedCoefficients, TreatmentRule};

use crate::config::FedRunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteCoefficients {
    pub site_id: u32,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

fn site_coefficients(site_ids: &[u32], beta: &StackedCoefficients) -> Vec<SiteCoefficients> {
    site_ids
        .iter()
        .enumerate()
        .map(|(k, &site_id)| SiteCoefficients {
            site_id,
            intercept: beta.intercepts[k],
            coefficients: beta.blocks.column(k).iter().copied().collect(),
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct FitOutput<'a> {
    command: &'static str,
    config: &'a FitConfig,
    lambda_index: usize,
    lambda: f64,
    gamma: f64,
    fallback: bool,
    sites: Vec<SiteCoefficients>,
}

#[derive(Debug, Serialize)]
struct FedOutput<'a> {
    command: &'static str,
    config: &'a FedRunConfig,
    lambda: f64,
    sites: Vec<SiteCoefficients>,
    traffic: Vec<RoundCount>,
}

/// Only the part of a model file that `evaluate` needs.
#[derive(Debug, Deserialize)]
struct ModelFile {
    sites: Vec<SiteCoefficients>,
}

#[derive(Debug, Serialize)]
struct PathRow {
    lambda_index: usize,
    lambda: f64,
    df: usize,
    active_features: usize,
    objective: f64,
    kkt_max: f64,
    cycles: usize,
    converged: bool,
    goodness: f64,
}

#[derive(Debug, Serialize)]
struct CurveRow {
    gamma: f64,
    total_variation: f64,
    lambda_index: usize,
    lambda: f64,
    df: usize,
    criterion: f64,
    normalized: f64,
}

#[derive(Debug, Serialize)]
struct EvalRow {
    site_id: u32,
    n: usize,
    treated_share: f64,
    value: f64,
    concordance: f64,
}

#[derive(Debug, Serialize)]
struct SummaryCsvRow<'a> {
    scenario: usize,
    method: &'a str,
    completed: usize,
    failed: usize,
    value_q1: Option<f64>,
    value_mean: Option<f64>,
    value_q3: Option<f64>,
    accuracy_q1: Option<f64>,
    accuracy_mean: Option<f64>,
    accuracy_q3: Option<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_csv<T: Serialize, W: Write>(out: W, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_csv_file<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    write_csv(BufWriter::new(File::create(path)?), rows)
}

/// CSV to `path`, or stdout when no path is given.
fn write_csv_to<T: Serialize>(path: Option<&Path>, rows: &[T]) -> CliResult<()> {
    match path {
        Some(p) => write_csv_file(p, rows),
        None => write_csv(std::io::stdout().lock(), rows),
    }
}

fn nuisances(data: &MultiSiteData, cfg: &FitConfig) -> CliResult<Vec<NuisanceEstimates>> {
    cfg.validate()?;
    Ok(crossfit_all(data.sites(), &NuisanceConfig::from_fit_config(cfg))?)
}

fn curve_rows(scores: &PathScores, gammas: &[f64]) -> CliResult<Vec<CurveRow>> {
    let mut rows = Vec::with_capacity(gammas.len() * scores.lambdas.len());
    for &gamma in gammas {
        let curve = scores.curve(gamma);
        let tv = if curve.criterion.len() < 2 { 0.0 } else { total_variation(&curve.criterion)? };
        for (l, norm) in normalize(&curve.criterion).into_iter().enumerate() {
            rows.push(CurveRow {
                gamma,
                total_variation: tv,
                lambda_index: l,
                lambda: curve.lambdas[l],
                df: curve.df[l],
                criterion: curve.criterion[l],
                normalized: norm,
            });
        }
    }
    Ok(rows)
}

fn path_rows(fit: &ModelFit) -> Vec<PathRow> {
    let path = &fit.path;
    (0..path.len())
        .map(|l| PathRow {
            lambda_index: l,
            lambda: path.lambdas[l],
            df: fit.scores.df[l],
            active_features: path.active_sets[l].len(),
            objective: path.objectives[l],
            kkt_max: path.kkt_max[l],
            cycles: path.cycles_used[l],
            converged: path.converged[l],
            goodness: fit.scores.goodness[l],
        })
        .collect()
}

fn check_converged(fit: &ModelFit) -> CliResult<()> {
    let failed = fit.path.converged.iter().filter(|&&c| !c).count();
    if failed > 0 {
        return Err(CliError::NotConverged(format!(
            "{failed} of {} path points hit max_cycles = {}",
            fit.path.len(),
            fit.config.max_cycles
        )));
    }
    Ok(())
}

/// Fits the path and writes `model.json`, `path.csv` and `curve.csv`.
/// Diagnostics are written before a convergence failure is reported.
pub fn fit(manifest: &Path, cfg: &FitConfig, out: &Path) -> CliResult<()> {
    let data = load_manifest(manifest)?;
    let nuis = nuisances(&data, cfg)?;
    let fit = fit_with_nuisances(&data, &nuis, cfg)?;
    fs::create_dir_all(out)?;
    write_json(
        &out.join("model.json"),
        &FitOutput {
            command: "fit",
            config: cfg,
            lambda_index: fit.selection.lambda_index,
            lambda: fit.selection.lambda,
            gamma: fit.selection.gamma,
            fallback: fit.selection.fallback,
            sites: site_coefficients(&fit.site_ids, &fit.coefficients),
        },
    )?;
    write_csv_file(&out.join("path.csv"), &path_rows(&fit))?;
    write_csv_file(&out.join("curve.csv"), &curve_rows(&fit.scores, &fit.selection.gammas)?)?;
    check_converged(&fit)
}

/// Criterion curves for every gamma, as tidy CSV.
pub fn tune_curve(manifest: &Path, cfg: &FitConfig, gammas: Option<&[f64]>, out: Option<&Path>) -> CliResult<()> {
    let data = load_manifest(manifest)?;
    let nuis = nuisances(&data, cfg)?;
    let fit = fit_with_nuisances(&data, &nuis, cfg)?;
    let grid = match gammas {
        Some(g) => {
            if g.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(CliError::Input("gammas must be finite and non-negative".into()));
            }
            g.to_vec()
        }
        None => fit.selection.gammas.clone(),
    };
    write_csv_to(out, &curve_rows(&fit.scores, &grid)?)
}

/// Runs the simulated federated protocol and writes `model.json`,
/// `messages.jsonl` and `traffic.csv`.
pub fn fedfit(manifest: &Path, cfg: &FedRunConfig, out: &Path) -> CliResult<()> {
    if cfg.fit.penalty != "coop" {
        return Err(CliError::Input(format!(
            "the federated protocol supports the coop penalty only, got '{}'",
            cfg.fit.penalty
        )));
    }
    let data = load_manifest(manifest)?;
    let nuis = nuisances(&data, &cfg.fit)?;
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => fit_with_nuisances(&data, &nuis, &cfg.fit)?.selection.lambda,
    };
    let sites = prepare_sites(&data, &nuis, &cfg.fit)?;
    let fed = FedConfig {
        lambda,
        cycles: cfg.cycles,
        init: cfg.init,
        broadcast: cfg.broadcast,
    };
    let (beta, log) = run_federated_fit(&sites, &fed)?;
    let traffic = message_accounting(&log)?;
    fs::create_dir_all(out)?;
    let site_ids: Vec<u32> = data.sites().iter().map(|s| s.site_id).collect();
    write_json(
        &out.join("model.json"),
        &FedOutput {
            command: "fedfit",
            config: cfg,
            lambda,
            sites: site_coefficients(&site_ids, &beta),
            traffic: traffic.clone(),
        },
    )?;
    let mut messages = BufWriter::new(File::create(out.join("messages.jsonl"))?);
    log.write_json_lines(&mut messages)?;
    messages.flush()?;
    write_csv_file(&out.join("traffic.csv"), &traffic)
}

/// Writes `metrics.csv` (one row per replication and method), `summary.csv`
/// and `summary.json`.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let result = run_experiment(cfg)?;
    fs::create_dir_all(out)?;
    result.write_csv(BufWriter::new(File::create(out.join("metrics.csv"))?))?;
    let rows: Vec<SummaryCsvRow> = result.summary.iter().map(summary_row).collect();
    write_csv_file(&out.join("summary.csv"), &rows)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        command: &'static str,
        config: &'a ExperimentConfig,
        summary: &'a [SummaryRow],
    }
    write_json(
        &out.join("summary.json"),
        &Summary {
            command: "simulate",
            config: cfg,
            summary: &result.summary,
        },
    )
}

fn summary_row(s: &SummaryRow) -> SummaryCsvRow<'_> {
    let rv = s.relative_value.as_ref();
    let acc = s.accuracy.as_ref();
    SummaryCsvRow {
        scenario: s.scenario,
        method: &s.method,
        completed: s.completed,
        failed: s.failed,
        value_q1: rv.map(|q| q.q1),
        value_mean: rv.map(|q| q.mean),
        value_q3: rv.map(|q| q.q3),
        accuracy_q1: acc.map(|q| q.q1),
        accuracy_mean: acc.map(|q| q.mean),
        accuracy_q3: acc.map(|q| q.q3),
    }
}

/// Scores a saved model on new site data with freshly cross-fitted
/// nuisances: estimated mean outcome under the rule (lower is better) and
/// concordance of the rule scores with the estimated effects.
pub fn evaluate(model: &Path, manifest: &Path, cfg: &FitConfig, out: Option<&Path>) -> CliResult<()> {
    let model: ModelFile = serde_json::from_str(&fs::read_to_string(model)?)?;
    let data = load_manifest(manifest)?;
    let nuis = nuisances(&data, cfg)?;
    let scoring = build_scoring_sites(data.sites(), &nuis)?;
    let mut rows = Vec::with_capacity(scoring.len());
    for (site, score_site) in data.sites().iter().zip(&scoring) {
        let coef = model
            .sites
            .iter()
            .find(|c| c.site_id == site.site_id)
            .ok_or_else(|| CliError::Input(format!("model has no coefficients for site {}", site.site_id)))?;
        if coef.coefficients.len() != site.p() {
            return Err(CliError::Input(format!(
                "site {}: model has {} coefficients but the data has {} covariates",
                site.site_id,
                coef.coefficients.len(),
                site.p()
            )));
        }
        let mut full = vec![coef.intercept];
        full.extend_from_slice(&coef.coefficients);
        let rule = TreatmentRule::new(full.into());
        let mut treated = 0usize;
        for i in 0..site.n() {
            let x: Vec<f64> = site.x.row(i).iter().copied().collect();
            if apply_rule(&rule, &x)? > 0.0 {
                treated += 1;
            }
        }
        rows.push(EvalRow {
            site_id: site.site_id,
            n: site.n(),
            treated_share: treated as f64 / site.n() as f64,
            value: aipw_value(score_site, &rule)?,
            concordance: aipw_concordance(score_site, &rule.coefficients)?,
        });
    }
    write_csv_to(out, &rows)
}
