//! Energy balancing weights.
//!
//! Within each arm, weights are chosen so the weighted arm distribution is
//! close in energy distance to the whole site's covariate distribution:
//!
//! `E(q) = 2 sum_i q_i b_i - q' D_aa q - c`,  `b_i = (1/n) sum_m ||x_i - x_m||`,
//!
//! over the simplex `q >= 0, sum q = 1`; the returned weights are `n q`, so
//! each arm's weights sum to n. Covariates are standardized per site.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SiteDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyWeights {
    pub weights: DVector<f64>,
    pub converged: bool,
    /// Energy distance of each arm (index 0: treated, 1: control) before and after.
    pub distance_uniform: [f64; 2],
    pub distance_weighted: [f64; 2],
}

/// Columns centered and scaled to unit sample standard deviation; constant
/// columns are only centered.
pub fn standardize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let mean = x.column(j).mean();
        let var = if n > 1 {
            x.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let sd = var.sqrt();
        for i in 0..n {
            out[(i, j)] = if sd > 0.0 { (x[(i, j)] - mean) / sd } else { x[(i, j)] - mean };
        }
    }
    out
}

pub fn distance_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for m in (i + 1)..n {
            let dist = (x.row(i) - x.row(m)).norm();
            d[(i, m)] = dist;
            d[(m, i)] = dist;
        }
    }
    d
}

/// Energy distance between the `q`-weighted rows `arm` and the full sample.
pub fn weighted_energy_distance(d: &DMatrix<f64>, arm: &[usize], q: &DVector<f64>) -> f64 {
    let n = d.nrows() as f64;
    let mut cross = 0.0;
    let mut within = 0.0;
    for (a, &i) in arm.iter().enumerate() {
        cross += q[a] * d.row(i).sum() / n;
        for (b, &m) in arm.iter().enumerate() {
            within += q[a] * q[b] * d[(i, m)];
        }
    }
    2.0 * cross - within - d.sum() / (n * n)
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let candidate = (cum - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

fn balance_arm(d: &DMatrix<f64>, arm: &[usize], opts: &EnergyOptions) -> (DVector<f64>, bool, f64, f64) {
    let na = arm.len();
    let n = d.nrows() as f64;
    let b = DVector::from_fn(na, |a, _| d.row(arm[a]).sum() / n);
    let daa = DMatrix::from_fn(na, na, |a, c| d[(arm[a], arm[c])]);
    let lipschitz = 2.0 * (0..na).map(|a| daa.row(a).sum()).fold(0.0, f64::max);
    let uniform = DVector::from_element(na, 1.0 / na as f64);
    let start = weighted_energy_distance(d, arm, &uniform);
    if lipschitz <= 0.0 || na == 1 {
        return (uniform, true, start, start);
    }
    let step = 1.0 / lipschitz;

    // Accelerated projected gradient, keeping the best iterate seen.
    let objective = |q: &DVector<f64>| 2.0 * b.dot(q) - q.dot(&(&daa * q));
    let mut q = uniform.clone();
    let mut momentum = q.clone();
    let mut tk: f64 = 1.0;
    let mut best = (objective(&q), q.clone());
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let grad = (&b - &daa * &momentum) * 2.0;
        let next = project_simplex(&(&momentum - grad * step));
        let change = (&next - &q).amax();
        let tk_next = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        momentum = &next + (&next - &q) * ((tk - 1.0) / tk_next);
        tk = tk_next;
        q = next;
        let value = objective(&q);
        if value < best.0 {
            best = (value, q.clone());
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let end = weighted_energy_distance(d, arm, &best.1);
    (best.1, converged, start, end)
}

/// Per-arm energy balancing weights for one site.
pub fn energy_balancing_weights(site: &SiteDataset, opts: &EnergyOptions) -> Result<EnergyWeights> {
    let n = site.n();
    let treated: Vec<usize> = (0..n).filter(|&i| site.t[i] > 0.0).collect();
    let control: Vec<usize> = (0..n).filter(|&i| site.t[i] < 0.0).collect();
    if treated.is_empty() || control.is_empty() {
        return Err(Error::SingleArm {
            site_id: site.site_id,
        });
    }
    let d = distance_matrix(&standardize(&site.x));
    let mut weights = DVector::zeros(n);
    let mut converged = true;
    let mut before = [0.0; 2];
    let mut after = [0.0; 2];
    for (slot, arm) in [treated, control].iter().enumerate() {
        let (q, ok, start, end) = balance_arm(&d, arm, opts);
        converged &= ok;
        before[slot] = start;
        after[slot] = end;
        // Floor keeps every weight strictly positive for the weighted loss.
        let floor = 1e-6 / arm.len() as f64;
        let total: f64 = q.iter().map(|v| v.max(floor)).sum();
        for (a, &i) in arm.iter().enumerate() {
            weights[i] = n as f64 * q[a].max(floor) / total;
        }
    }
    Ok(EnergyWeights {
        weights,
        converged,
        distance_uniform: before,
        distance_weighted: after,
    })
}
