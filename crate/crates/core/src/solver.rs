//! Block coordinate descent over a warm-started lambda path.
//!
//! Each penalized block `j` takes the step `prox(b_j - U_j / gamma_j)` with
//! `gamma_j` the curvature bound from [`hessian_majorizer`]. Intercepts are
//! unpenalized and per-site, so each is minimized exactly using its own
//! site's curvature, first in every cycle. Blocks are screened with the
//! sequential strong rule and screened-out blocks are re-admitted when they
//! violate their KKT condition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{hessian_majorizer, ResidualizedSite};
use crate::model::{FitConfig, StackedCoefficients};
use crate::penalty::Penalty;

/// Coefficients along a descending lambda sequence with per-lambda diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFit {
    pub lambdas: Vec<f64>,
    pub fits: Vec<StackedCoefficients>,
    /// Features (0-based) with a nonzero block at each lambda.
    pub active_sets: Vec<Vec<usize>>,
    pub objectives: Vec<f64>,
    pub kkt_max: Vec<f64>,
    pub cycles_used: Vec<usize>,
    pub converged: Vec<bool>,
}

impl PathFit {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_cycles: usize,
    pub use_strong_rules: bool,
}

impl SolverOptions {
    pub fn from_config(cfg: &FitConfig) -> Self {
        Self {
            tol: cfg.tol,
            max_cycles: cfg.max_cycles,
            use_strong_rules: cfg.use_strong_rules,
        }
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self::from_config(&FitConfig::default())
    }
}

/// Mutable solver state: coefficients plus each site's residual `y - c f`.
pub(crate) struct Workspace<'a> {
    sites: &'a [ResidualizedSite],
    penalty: &'a dyn Penalty,
    /// Block curvature bounds; index 0 is unused (intercepts use `intercept_curv`).
    gamma: DVector<f64>,
    intercept_curv: Vec<f64>,
    wc: Vec<DVector<f64>>,
    resid: Vec<DVector<f64>>,
    pub(crate) beta: StackedCoefficients,
}

impl<'a> Workspace<'a> {
    pub(crate) fn new(
        sites: &'a [ResidualizedSite],
        penalty: &'a dyn Penalty,
        beta: StackedCoefficients,
    ) -> Result<Self> {
        let first = sites.first().ok_or(Error::NoSites)?;
        if beta.k() != sites.len() || beta.p() != first.p() {
            return Err(Error::DimensionMismatch("initial coefficients do not match the sites".into()));
        }
        let gamma = hessian_majorizer(sites)?;
        let intercept_curv = sites.iter().map(|s| s.curvature(0)).collect();
        let wc = sites.iter().map(|s| s.weight.component_mul(&s.contrast)).collect();
        let resid = sites
            .iter()
            .enumerate()
            .map(|(k, s)| s.residuals(&beta.site(k)))
            .collect();
        Ok(Self {
            sites,
            penalty,
            gamma,
            intercept_curv,
            wc,
            resid,
            beta,
        })
    }

    pub(crate) fn p(&self) -> usize {
        self.beta.p()
    }

    pub(crate) fn k(&self) -> usize {
        self.beta.k()
    }

    fn site_grad(&self, k: usize, j: usize) -> f64 {
        let s = &self.sites[k];
        let wc = &self.wc[k];
        let r = &self.resid[k];
        let acc: f64 = if j == 0 {
            wc.dot(r)
        } else {
            let col = s.x.column(j - 1);
            (0..s.n()).map(|i| wc[i] * col[i] * r[i]).sum()
        };
        -2.0 * acc / s.n() as f64
    }

    /// Block gradient (length K) at the current coefficients.
    pub(crate) fn grad(&self, j: usize) -> DVector<f64> {
        DVector::from_fn(self.k(), |k, _| self.site_grad(k, j))
    }

    fn shift_site(&mut self, k: usize, j: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        let s = &self.sites[k];
        let r = &mut self.resid[k];
        if j == 0 {
            for i in 0..s.n() {
                r[i] -= s.contrast[i] * delta;
            }
        } else {
            let col = s.x.column(j - 1);
            for i in 0..s.n() {
                r[i] -= s.contrast[i] * col[i] * delta;
            }
        }
    }

    /// Exact per-site intercept minimization; returns the largest change.
    pub(crate) fn update_intercepts(&mut self) -> f64 {
        let mut change: f64 = 0.0;
        for k in 0..self.k() {
            let delta = -self.site_grad(k, 0) / self.intercept_curv[k];
            self.beta.intercepts[k] += delta;
            self.shift_site(k, 0, delta);
            change = change.max(delta.abs());
        }
        change
    }

    /// Proximal Newton step on feature block `j` (1-based block index).
    pub(crate) fn update_block(&mut self, j: usize, lambda: f64) -> Result<f64> {
        let gamma = self.gamma[j];
        let current = self.beta.block(j - 1);
        let z = &current - self.grad(j) / gamma;
        let next = self.penalty.prox(&z, gamma, lambda)?;
        self.set_block(j, &current, &next);
        Ok((&next - &current).amax())
    }

    pub(crate) fn set_block(&mut self, j: usize, current: &DVector<f64>, next: &DVector<f64>) {
        for k in 0..self.k() {
            self.shift_site(k, j, next[k] - current[k]);
        }
        self.beta.set_block(j - 1, next);
    }

    pub(crate) fn loss(&self) -> f64 {
        self.sites
            .iter()
            .zip(&self.resid)
            .map(|(s, r)| s.weight.dot(&r.component_mul(r)) / s.n() as f64)
            .sum()
    }

    pub(crate) fn objective(&self, lambda: f64) -> f64 {
        self.loss() + lambda * self.penalty.value(&self.beta)
    }

    pub(crate) fn kkt(&self, j: usize, lambda: f64) -> f64 {
        if j == 0 {
            self.grad(0).amax()
        } else {
            self.penalty
                .kkt_residual(&self.grad(j), &self.beta.block(j - 1), lambda)
        }
    }

    fn block_is_zero(&self, j: usize) -> bool {
        self.beta.blocks.row(j - 1).iter().all(|&v| v == 0.0)
    }

    /// Solves at `lambda` over the feature blocks in `working` (1-based),
    /// returning (cycles, converged).
    fn solve(&mut self, lambda: f64, working: &[usize], tol: f64, max_cycles: usize) -> Result<(usize, bool)> {
        let mut cycles = 0;
        while cycles < max_cycles {
            cycles += 1;
            let mut change = self.update_intercepts();
            for &j in working {
                change = change.max(self.update_block(j, lambda)?);
            }
            if change < tol {
                let kkt_ok = (0..1)
                    .chain(working.iter().copied())
                    .all(|j| self.kkt(j, lambda) <= tol);
                if kkt_ok {
                    return Ok((cycles, true));
                }
                continue;
            }
            // Cycle the nonzero blocks until they settle, then sweep again.
            let active: Vec<usize> = working.iter().copied().filter(|&j| !self.block_is_zero(j)).collect();
            while cycles < max_cycles {
                cycles += 1;
                let mut inner = self.update_intercepts();
                for &j in &active {
                    inner = inner.max(self.update_block(j, lambda)?);
                }
                if inner < tol {
                    break;
                }
            }
        }
        Ok((cycles, false))
    }
}

/// Convergence threshold, scaled down for outcomes of small magnitude so the
/// solution is accurate relative to the outcome scale.
fn effective_tol(sites: &[ResidualizedSite], tol: f64) -> f64 {
    let scale = sites
        .iter()
        .map(|s| (s.weight.dot(&s.y.component_mul(&s.y)) / s.n() as f64).sqrt())
        .fold(0.0, f64::max);
    if scale > 0.0 {
        tol * scale.min(1.0)
    } else {
        tol
    }
}

/// Blocks discarded by the sequential strong rule: those whose statistic at
/// the previous lambda (largest sign-part norm of the negative gradient) is
/// below `2 lambda_cur - lambda_prev`. Nothing is discarded when that
/// threshold is not positive.
pub fn strong_rule_screen(corr_prev: &[f64], lambda_prev: f64, lambda_cur: f64) -> Vec<usize> {
    let threshold = 2.0 * lambda_cur - lambda_prev;
    if threshold <= 0.0 {
        return Vec::new();
    }
    corr_prev
        .iter()
        .enumerate()
        .filter(|(_, &c)| c < threshold)
        .map(|(j, _)| j)
        .collect()
}

fn intercept_only(sites: &[ResidualizedSite], penalty: &dyn Penalty) -> Result<StackedCoefficients> {
    let first = sites.first().ok_or(Error::NoSites)?;
    let mut ws = Workspace::new(sites, penalty, StackedCoefficients::zeros(first.p(), sites.len()))?;
    ws.update_intercepts();
    Ok(ws.beta)
}

/// Smallest lambda at which every penalized block is zero, with the
/// intercepts fitted.
pub fn lambda_max(sites: &[ResidualizedSite], penalty: &dyn Penalty) -> Result<f64> {
    let start = intercept_only(sites, penalty)?;
    let ws = Workspace::new(sites, penalty, start)?;
    Ok((1..=ws.p())
        .map(|j| penalty.zero_threshold(&ws.grad(j)))
        .fold(0.0, f64::max))
}

/// Geometric sequence of `n_lambda` values from `lambda_max` down to
/// `lambda_max * lambda_min_ratio`. An unpenalized fit gets the single value 0.
pub fn lambda_path(sites: &[ResidualizedSite], penalty: &dyn Penalty, cfg: &FitConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !penalty.is_penalized() {
        return Ok(vec![0.0]);
    }
    let top = lambda_max(sites, penalty)?;
    if !(top > 0.0) || !top.is_finite() {
        return Err(Error::DegenerateData("all block gradients vanish at zero".into()));
    }
    if cfg.n_lambda == 1 {
        return Ok(vec![top]);
    }
    let ratio = cfg.lambda_min_ratio.ln() / (cfg.n_lambda - 1) as f64;
    Ok((0..cfg.n_lambda)
        .map(|l| top * (ratio * l as f64).exp())
        .collect())
}

/// Fits the default path for `cfg`.
pub fn fit_path(sites: &[ResidualizedSite], penalty: &dyn Penalty, cfg: &FitConfig) -> Result<PathFit> {
    let lambdas = lambda_path(sites, penalty, cfg)?;
    fit_path_with(sites, penalty, &lambdas, &SolverOptions::from_config(cfg))
}

/// Fits a user-supplied strictly decreasing, non-negative lambda sequence.
pub fn fit_path_with(
    sites: &[ResidualizedSite],
    penalty: &dyn Penalty,
    lambdas: &[f64],
    opts: &SolverOptions,
) -> Result<PathFit> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty lambda path".into()));
    }
    if lambdas.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidParameter("lambdas must be finite and non-negative".into()));
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("lambdas must be strictly decreasing".into()));
    }
    let start = intercept_only(sites, penalty)?;
    let mut ws = Workspace::new(sites, penalty, start)?;
    let p = ws.p();
    let tol = effective_tol(sites, opts.tol);

    let mut out = PathFit {
        lambdas: lambdas.to_vec(),
        fits: Vec::with_capacity(lambdas.len()),
        active_sets: Vec::with_capacity(lambdas.len()),
        objectives: Vec::with_capacity(lambdas.len()),
        kkt_max: Vec::with_capacity(lambdas.len()),
        cycles_used: Vec::with_capacity(lambdas.len()),
        converged: Vec::with_capacity(lambdas.len()),
    };

    let mut prev_stats: Option<Vec<f64>> = None;
    for (l, &lambda) in lambdas.iter().enumerate() {
        let mut in_set = vec![true; p + 1];
        if opts.use_strong_rules && penalty.is_penalized() {
            if let Some(stats) = &prev_stats {
                for j in strong_rule_screen(stats, lambdas[l - 1], lambda) {
                    // Blocks already nonzero stay in play.
                    if ws.block_is_zero(j + 1) {
                        in_set[j + 1] = false;
                    }
                }
            }
        }
        let mut cycles_total = 0;
        let mut converged;
        loop {
            let working: Vec<usize> = (1..=p).filter(|&j| in_set[j]).collect();
            let budget = opts.max_cycles.saturating_sub(cycles_total).max(1);
            let (cycles, ok) = ws.solve(lambda, &working, tol, budget)?;
            cycles_total += cycles;
            converged = ok;
            let violators: Vec<usize> = (1..=p)
                .filter(|&j| !in_set[j] && ws.kkt(j, lambda) > tol)
                .collect();
            if violators.is_empty() || cycles_total >= opts.max_cycles {
                converged &= violators.is_empty();
                break;
            }
            for j in violators {
                in_set[j] = true;
            }
        }
        let kkt_max = (0..=p).map(|j| ws.kkt(j, lambda)).fold(0.0, f64::max);
        out.fits.push(ws.beta.clone());
        out.active_sets.push(ws.beta.active_features());
        out.objectives.push(ws.objective(lambda));
        out.kkt_max.push(kkt_max);
        out.cycles_used.push(cycles_total);
        out.converged.push(converged);
        prev_stats = Some((1..=p).map(|j| penalty.zero_threshold(&ws.grad(j))).collect());
    }
    Ok(out)
}

/// Runs exactly `cycles` full cycles from `init` at a single lambda: each
/// cycle updates the intercepts, then every block in `features` (0-based,
/// ascending). No screening and no early stopping.
pub fn fixed_cycle_fit(
    sites: &[ResidualizedSite],
    penalty: &dyn Penalty,
    lambda: f64,
    init: StackedCoefficients,
    cycles: usize,
    features: Option<&[usize]>,
) -> Result<StackedCoefficients> {
    let mut ws = Workspace::new(sites, penalty, init)?;
    let order: Vec<usize> = match features {
        Some(f) => f.iter().map(|&j| j + 1).collect(),
        None => (1..=ws.p()).collect(),
    };
    if let Some(&bad) = order.iter().find(|&&j| j > ws.p()) {
        return Err(Error::IndexOutOfRange {
            index: bad - 1,
            limit: ws.p(),
        });
    }
    for _ in 0..cycles {
        ws.update_intercepts();
        for &j in &order {
            ws.update_block(j, lambda)?;
        }
    }
    Ok(ws.beta)
}

/// Weighted least squares for one site, intercept unpenalized:
/// minimizes `(1/n) sum w (y - c (b0 + <b, x>))^2 + ridge ||b||^2`.
/// The ridge term is `1e-4` times the mean diagonal of the normal matrix and
/// is only used when `n <= p` or the unpenalized system is singular.
pub fn site_least_squares(site: &ResidualizedSite) -> Result<DVector<f64>> {
    stacked_least_squares(std::slice::from_ref(site))
}

fn stacked_least_squares(sites: &[ResidualizedSite]) -> Result<DVector<f64>> {
    let first = sites.first().ok_or(Error::NoSites)?;
    let p = first.p();
    let n_total: usize = sites.iter().map(ResidualizedSite::n).sum();
    let mut gram = DMatrix::zeros(p + 1, p + 1);
    let mut rhs = DVector::zeros(p + 1);
    let mut row = DVector::zeros(p + 1);
    for s in sites {
        for i in 0..s.n() {
            row[0] = s.contrast[i];
            for j in 0..p {
                row[j + 1] = s.contrast[i] * s.x[(i, j)];
            }
            let w = s.weight[i];
            gram.ger(w, &row, &row, 1.0);
            rhs.axpy(w * s.y[i], &row, 1.0);
        }
    }
    let ridge_level = 1e-4 * gram.trace() / (p + 1) as f64;
    let solve = |ridge: f64| {
        let mut g = gram.clone();
        for j in 1..=p {
            g[(j, j)] += ridge;
        }
        g.cholesky().map(|c| c.solve(&rhs))
    };
    let direct = if n_total > p + 1 { solve(0.0) } else { None };
    direct
        .filter(|b| b.iter().all(|v| v.is_finite()))
        .or_else(|| solve(ridge_level))
        .ok_or_else(|| Error::Numerical("normal equations are singular".into()))
}

/// Each site fitted on its own data.
pub fn fit_separate(sites: &[ResidualizedSite]) -> Result<StackedCoefficients> {
    let per_site = sites
        .iter()
        .map(site_least_squares)
        .collect::<Result<Vec<_>>>()?;
    StackedCoefficients::from_sites(&per_site)
}

/// One coefficient vector fitted on all sites' rows together.
pub fn fit_pooled(sites: &[ResidualizedSite]) -> Result<DVector<f64>> {
    if let Some(s) = sites.iter().find(|s| s.p() != sites[0].p()) {
        return Err(Error::DimensionMismatch(format!("site {} feature count", s.site_id)));
    }
    stacked_least_squares(sites)
}
