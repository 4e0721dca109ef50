//! Concordance and value estimators, information-criterion curves and the
//! adaptive total-variation choice of lambda.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decision_from_score, SiteDataset, StackedCoefficients, TreatmentRule};
use crate::nuisance::NuisanceEstimates;
use crate::registry::Registry;
use crate::solver::PathFit;

/// A site paired with its nuisances, ready for criterion evaluation.
///
/// `psi_i = w_i t_i (y_i - a_i)` is the signed, weighted residual: it is an
/// unbiased proxy for twice the treatment effect at `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringSite {
    pub site_id: u32,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub t: DVector<f64>,
    pub w: DVector<f64>,
    pub a_pos: DVector<f64>,
    pub a_neg: DVector<f64>,
    pub psi: DVector<f64>,
}

impl ScoringSite {
    pub fn new(site: &SiteDataset, nuis: &NuisanceEstimates) -> Result<Self> {
        if nuis.n() != site.n() {
            return Err(Error::DimensionMismatch(format!(
                "site {}: {} rows but {} nuisance values",
                site.site_id,
                site.n(),
                nuis.n()
            )));
        }
        let psi = DVector::from_fn(site.n(), |i, _| nuis.w[i] * site.t[i] * (site.y[i] - nuis.a_hat[i]));
        Ok(Self {
            site_id: site.site_id,
            x: site.x.clone(),
            y: site.y.clone(),
            t: site.t.clone(),
            w: nuis.w.clone(),
            a_pos: nuis.a_pos.clone(),
            a_neg: nuis.a_neg.clone(),
            psi,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Linear scores without the intercept, which cannot change any ordering.
    fn slopes(&self, coef: &DVector<f64>) -> Result<DVector<f64>> {
        if coef.len() != self.x.ncols() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "coefficient length {} for {} features",
                coef.len(),
                self.x.ncols()
            )));
        }
        Ok(&self.x * coef.rows(1, self.x.ncols()))
    }
}

pub fn build_scoring_sites(sites: &[SiteDataset], nuisances: &[NuisanceEstimates]) -> Result<Vec<ScoringSite>> {
    if sites.len() != nuisances.len() {
        return Err(Error::DimensionMismatch("one nuisance set per site required".into()));
    }
    sites.iter().zip(nuisances).map(|(s, n)| ScoringSite::new(s, n)).collect()
}

/// Pairwise concordance `sum_{i != j} (psi_i - psi_j) 1(f_i > f_j) / (n (n - 1))`
/// by sorting: each `psi_i` enters with weight `#{f_j < f_i} - #{f_j > f_i}`.
pub fn concordance_from_scores(psi: &DVector<f64>, scores: &DVector<f64>) -> Result<f64> {
    let n = psi.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let less = start as f64;
        let greater = (n - end) as f64;
        let tie_sum: f64 = order[start..end].iter().map(|&i| psi[i]).sum();
        total += tie_sum * (less - greater);
        start = end;
    }
    Ok(total / (n * (n - 1)) as f64)
}

/// Quadratic reference for [`concordance_from_scores`].
pub fn concordance_brute_force(psi: &DVector<f64>, scores: &DVector<f64>) -> Result<f64> {
    let n = psi.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && scores[i] > scores[j] {
                total += psi[i] - psi[j];
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

pub fn aipw_concordance(site: &ScoringSite, beta_site: &DVector<f64>) -> Result<f64> {
    concordance_from_scores(&site.psi, &site.slopes(beta_site)?)
}

/// Augmented IPW estimate of the mean outcome under `rule`.
pub fn aipw_value(site: &ScoringSite, rule: &TreatmentRule) -> Result<f64> {
    let scores = site.slopes(&rule.coefficients)?;
    let n = site.n();
    if n == 0 {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    let total: f64 = (0..n)
        .map(|i| {
            let d = decision_from_score(scores[i] + rule.coefficients[0]);
            let a = if d > 0.0 { site.a_pos[i] } else { site.a_neg[i] };
            let hit = if site.t[i] == d { site.w[i] * (site.y[i] - a) } else { 0.0 };
            hit + a
        })
        .sum();
    Ok(total / n as f64)
}

/// Per-site goodness term, scaled by the site size; larger is better.
pub trait Criterion: Send + Sync {
    fn name(&self) -> &'static str;
    fn goodness(&self, site: &ScoringSite, coef: &DVector<f64>) -> Result<f64>;
}

pub struct ConcordanceCriterion;

impl Criterion for ConcordanceCriterion {
    fn name(&self) -> &'static str {
        "cic"
    }

    fn goodness(&self, site: &ScoringSite, coef: &DVector<f64>) -> Result<f64> {
        Ok(site.n() as f64 * aipw_concordance(site, coef)?)
    }
}

/// Value criterion. Lower outcomes are better, so the value enters negated.
pub struct ValueCriterion;

impl Criterion for ValueCriterion {
    fn name(&self) -> &'static str {
        "vic"
    }

    fn goodness(&self, site: &ScoringSite, coef: &DVector<f64>) -> Result<f64> {
        Ok(-(site.n() as f64) * aipw_value(site, &TreatmentRule::new(coef.clone()))?)
    }
}

pub fn registry() -> Registry<dyn Criterion> {
    let mut reg: Registry<dyn Criterion> = Registry::new("criterion");
    reg.register("cic", || Box::new(ConcordanceCriterion))
        .register("vic", || Box::new(ValueCriterion));
    reg
}

pub fn by_name(name: &str) -> Result<Box<dyn Criterion>> {
    registry().create(name)
}

/// Goodness and complexity of every fit on a path, computed once and shared
/// by all gamma values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathScores {
    pub lambdas: Vec<f64>,
    pub goodness: Vec<f64>,
    pub df: Vec<usize>,
    /// `log` of the total sample size.
    pub log_n: f64,
}

pub fn score_fits(
    lambdas: &[f64],
    fits: &[StackedCoefficients],
    sites: &[ScoringSite],
    criterion: &dyn Criterion,
) -> Result<PathScores> {
    if fits.iter().any(|f| f.k() != sites.len()) {
        return Err(Error::DimensionMismatch("fits and sites disagree on K".into()));
    }
    let goodness = fits
        .par_iter()
        .map(|fit| {
            sites
                .iter()
                .enumerate()
                .map(|(k, s)| criterion.goodness(s, &fit.site(k)))
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n_total: usize = sites.iter().map(ScoringSite::n).sum();
    Ok(PathScores {
        lambdas: lambdas.to_vec(),
        goodness,
        df: fits.iter().map(StackedCoefficients::nonzero_count).collect(),
        log_n: (n_total as f64).ln(),
    })
}

pub fn score_path(path: &PathFit, sites: &[ScoringSite], criterion: &dyn Criterion) -> Result<PathScores> {
    score_fits(&path.lambdas, &path.fits, sites, criterion)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ICCurve {
    pub lambdas: Vec<f64>,
    pub criterion: Vec<f64>,
    pub gamma: f64,
    pub df: Vec<usize>,
}

impl PathScores {
    pub fn curve(&self, gamma: f64) -> ICCurve {
        let criterion = self
            .goodness
            .iter()
            .zip(&self.df)
            .map(|(&g, &df)| g - gamma * self.log_n * df as f64)
            .collect();
        ICCurve {
            lambdas: self.lambdas.clone(),
            criterion,
            gamma,
            df: self.df.clone(),
        }
    }

    /// `n_gamma` log-spaced values over `[1e-2, 1e2]` times the goodness
    /// range divided by `log(n) * max df`.
    pub fn gamma_grid(&self, n_gamma: usize) -> Vec<f64> {
        let hi = self.goodness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.goodness.iter().copied().fold(f64::INFINITY, f64::min);
        let max_df = self.df.iter().copied().max().unwrap_or(0) as f64;
        let mut base = (hi - lo) / (self.log_n * max_df);
        if !(base > 0.0 && base.is_finite()) {
            base = 1.0;
        }
        if n_gamma <= 1 {
            return vec![base];
        }
        let step = 4.0 / (n_gamma - 1) as f64;
        (0..n_gamma)
            .map(|i| base * 10f64.powf(-2.0 + step * i as f64))
            .collect()
    }
}

pub fn cic_curve(path: &PathFit, sites: &[ScoringSite], gamma: f64, criterion: &dyn Criterion) -> Result<ICCurve> {
    Ok(score_path(path, sites, criterion)?.curve(gamma))
}

/// Min-max normalization to `[0, 1]`; constant curves map to zeros.
pub fn normalize(curve: &[f64]) -> Vec<f64> {
    let hi = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = curve.iter().copied().fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; curve.len()];
    }
    curve.iter().map(|&c| (c - lo) / range).collect()
}

/// Sum of absolute first differences of the normalized curve.
pub fn total_variation(curve: &[f64]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            got: curve.len(),
        });
    }
    let c = normalize(curve);
    Ok(c.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

/// Total variations closer than this are treated as equal.
const TV_TIE: f64 = 1e-9;
/// Criterion values within this fraction of the curve range count as ties.
const ARGMAX_TIE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub lambda_index: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub gammas: Vec<f64>,
    pub total_variation: Vec<f64>,
    /// Set when every curve was constant and the sparsest model was taken.
    pub fallback: bool,
    pub curve: ICCurve,
}

/// Index of the largest value; near-ties go to the smaller index (the larger
/// lambda, hence the sparser model).
fn argmax_sparse(curve: &[f64]) -> usize {
    let hi = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = curve.iter().copied().fold(f64::INFINITY, f64::min);
    let tie = ARGMAX_TIE * (hi - lo).max(0.0);
    curve.iter().position(|&c| c >= hi - tie).unwrap_or(0)
}

/// Picks the gamma whose normalized curve has the greatest total variation
/// (ties to the smaller gamma) and returns the maximizer of that curve.
pub fn adaptive_select_scores(scores: &PathScores, gammas: &[f64]) -> Result<Selection> {
    if gammas.is_empty() {
        return Err(Error::InvalidParameter("empty gamma grid".into()));
    }
    if gammas.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidParameter("gamma values must be finite and non-negative".into()));
    }
    if scores.goodness.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("criterion is not finite on the path".into()));
    }
    let len = scores.lambdas.len();
    let tvs: Vec<f64> = gammas
        .iter()
        .map(|&g| {
            if len < 2 {
                Ok(0.0)
            } else {
                total_variation(&scores.curve(g).criterion)
            }
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..gammas.len()).collect();
    order.sort_by(|&a, &b| gammas[a].total_cmp(&gammas[b]));
    let mut best = order[0];
    for &i in &order[1..] {
        if tvs[i] > tvs[best] + TV_TIE {
            best = i;
        }
    }
    let gamma = gammas[best];
    let curve = scores.curve(gamma);

    let all_flat = tvs.iter().all(|&v| v <= TV_TIE);
    let (lambda_index, fallback) = if all_flat && len > 1 {
        let min_df = scores.df.iter().copied().min().unwrap_or(0);
        (scores.df.iter().position(|&d| d == min_df).unwrap_or(0), true)
    } else {
        (argmax_sparse(&curve.criterion), false)
    };
    Ok(Selection {
        lambda_index,
        lambda: scores.lambdas[lambda_index],
        gamma,
        gammas: gammas.to_vec(),
        total_variation: tvs,
        fallback,
        curve,
    })
}

pub fn adaptive_select(
    path: &PathFit,
    sites: &[ScoringSite],
    gammas: &[f64],
    criterion: &dyn Criterion,
) -> Result<Selection> {
    adaptive_select_scores(&score_path(path, sites, criterion)?, gammas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn random_scoring(rng: &mut ChaCha8Rng, n: usize, p: usize) -> ScoringSite {
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let t = DVector::from_fn(n, |i, _| if i % 3 == 0 { 1.0 } else { -1.0 });
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let pi = DVector::from_fn(n, |_, _| rng.random_range(0.2..0.8));
        let w = crate::nuisance::ipw_weights(&pi, &t);
        let nuis = NuisanceEstimates::from_parts(
            pi,
            DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5)),
            DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5)),
            w,
        )
        .unwrap();
        let site = SiteDataset::new(1, y, t, x).unwrap();
        ScoringSite::new(&site, &nuis).unwrap()
    }

    #[test]
    fn concordance_examples() {
        let psi = vec(&[1.5, -0.5, 2.0]);
        assert_eq!(concordance_from_scores(&psi, &vec(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        let two = concordance_from_scores(&vec(&[3.0, 1.0]), &vec(&[2.0, 1.0])).unwrap();
        assert!((two - 1.0).abs() < 1e-15);
        assert!(concordance_from_scores(&vec(&[1.0]), &vec(&[1.0])).is_err());
    }

    #[test]
    fn concordance_fast_path_matches_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for case in 0..60 {
            let n = rng.random_range(2..=200);
            let psi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            // Every third case draws coarse scores so ties are frequent.
            let scores = DVector::from_fn(n, |_, _| {
                let s: f64 = rng.sample(StandardNormal);
                if case % 3 == 0 { s.round() } else { s }
            });
            let fast = concordance_from_scores(&psi, &scores).unwrap();
            let slow = concordance_brute_force(&psi, &scores).unwrap();
            assert!((fast - slow).abs() < 1e-10);
        }
    }

    #[test]
    fn value_examples() {
        // Every unit already follows the rule, unit weights.
        let n = 5;
        let site = ScoringSite {
            site_id: 1,
            x: DMatrix::from_fn(n, 2, |i, j| (i + j) as f64),
            y: vec(&[1.0, 2.0, 3.0, 4.0, 6.0]),
            t: DVector::from_element(n, -1.0),
            w: DVector::from_element(n, 1.0),
            a_pos: DVector::from_element(n, 0.7),
            a_neg: DVector::from_element(n, 0.3),
            psi: DVector::zeros(n),
        };
        let rule = TreatmentRule::new(DVector::zeros(3));
        assert!((aipw_value(&site, &rule).unwrap() - 3.2).abs() < 1e-12);

        // No augmentation and known 0.5 propensity.
        let site = ScoringSite {
            t: vec(&[1.0, -1.0, -1.0, 1.0, -1.0]),
            w: DVector::from_element(n, 2.0),
            a_pos: DVector::zeros(n),
            a_neg: DVector::zeros(n),
            ..site
        };
        let concordant: f64 = [2.0, 3.0, 6.0].iter().sum();
        assert!((aipw_value(&site, &rule).unwrap() - 2.0 * concordant / 5.0).abs() < 1e-12);
    }

    #[test]
    fn value_is_unbiased_under_randomization() {
        // Y(d) = x + d * x, randomized 0.5 assignment.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5000;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample(StandardNormal));
        let t = DVector::from_fn(n, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let noise: DVector<f64> = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + t[i] * x[(i, 0)] + noise[i]);
        let nuis = NuisanceEstimates::from_parts(
            DVector::from_element(n, 0.5),
            DVector::zeros(n),
            DVector::zeros(n),
            DVector::from_element(n, 2.0),
        )
        .unwrap();
        let site = ScoringSite::new(&SiteDataset::new(1, y, t, x.clone()).unwrap(), &nuis).unwrap();
        let rule = TreatmentRule::new(vec(&[0.0, 1.0]));
        let per_unit: Vec<f64> = (0..n)
            .map(|i| {
                let d = decision_from_score(x[(i, 0)]);
                if site.t[i] == d { 2.0 * site.y[i] } else { 0.0 }
            })
            .collect();
        let mean = per_unit.iter().sum::<f64>() / n as f64;
        let sd = (per_unit.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        // True value: E[x + d x] with d = -sign(x) is E[x] - E|x| + E[x] = -sqrt(2/pi).
        let truth = -(2.0 / std::f64::consts::PI).sqrt();
        let est = aipw_value(&site, &rule).unwrap();
        assert!((est - truth).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn total_variation_examples() {
        assert!((total_variation(&[1.0, 2.0, 5.0, 9.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(total_variation(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert!((total_variation(&[0.0, 1.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(total_variation(&[1.0]).is_err());
    }

    fn scores(goodness: &[f64], df: &[usize]) -> PathScores {
        PathScores {
            lambdas: (0..goodness.len()).map(|i| 1.0 / (i + 1) as f64).collect(),
            goodness: goodness.to_vec(),
            df: df.to_vec(),
            log_n: 100f64.ln(),
        }
    }

    #[test]
    fn gamma_extremes() {
        let s = scores(&[0.0, 5.0, 8.0, 9.0, 9.5], &[0, 2, 4, 7, 9]);
        // gamma = 0: plain goodness argmax.
        assert_eq!(adaptive_select_scores(&s, &[0.0]).unwrap().lambda_index, 4);
        // Huge gamma: sparsest model.
        assert_eq!(adaptive_select_scores(&s, &[1e9]).unwrap().lambda_index, 0);
    }

    #[test]
    fn single_gamma_is_plain_argmax() {
        let s = scores(&[0.0, 5.0, 8.0, 9.0, 9.5], &[0, 1, 2, 3, 4]);
        let g = 0.2;
        let curve = s.curve(g).criterion;
        let sel = adaptive_select_scores(&s, &[g]).unwrap();
        let best = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(curve[sel.lambda_index], best);
    }

    #[test]
    fn ties_prefer_sparser_model_and_smaller_gamma() {
        let s = scores(&[1.0, 3.0, 3.0, 2.0], &[0, 0, 0, 0]);
        let sel = adaptive_select_scores(&s, &[5.0, 1.0]).unwrap();
        assert_eq!(sel.lambda_index, 1);
        assert_eq!(sel.gamma, 1.0);
    }

    #[test]
    fn flat_curves_fall_back_to_sparsest() {
        let s = scores(&[2.0, 2.0, 2.0], &[3, 1, 1]);
        let sel = adaptive_select_scores(&s, &[0.0]).unwrap();
        assert!(sel.fallback);
        assert_eq!(sel.lambda_index, 1);
    }

    #[test]
    fn identical_fits_score_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sites = vec![random_scoring(&mut rng, 30, 3), random_scoring(&mut rng, 25, 3)];
        let fit = crate::testutil::random_stacked(&mut rng, 3, 2);
        let s = score_fits(&[2.0, 1.0], &[fit.clone(), fit], &sites, &ConcordanceCriterion).unwrap();
        assert_eq!(s.goodness[0], s.goodness[1]);
        // Decomposes into per-site terms.
        let first = score_fits(&[1.0], &[StackedCoefficients::zeros(3, 2)], &sites, &ValueCriterion).unwrap();
        let direct: f64 = sites
            .iter()
            .map(|s| -(s.n() as f64) * aipw_value(s, &TreatmentRule::new(DVector::zeros(4))).unwrap())
            .sum();
        assert!((first.goodness[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn gamma_grid_tracks_scale() {
        let s = scores(&[0.0, 5.0, 8.0], &[0, 2, 4]);
        let grid = s.gamma_grid(50);
        assert_eq!(grid.len(), 50);
        let base = 8.0 / (100f64.ln() * 4.0);
        assert!((grid[0] - base * 1e-2).abs() < 1e-15);
        assert!((grid[49] / (base * 1e2) - 1.0).abs() < 1e-12);
        let scaled = PathScores {
            goodness: s.goodness.iter().map(|g| g * 1e3).collect(),
            ..s.clone()
        };
        for (a, b) in grid.iter().zip(scaled.gamma_grid(50)) {
            assert!((b / a - 1e3).abs() < 1e-9);
        }
    }

    #[test]
    fn criteria_registry() {
        assert_eq!(by_name("cic").unwrap().name(), "cic");
        assert_eq!(by_name("vic").unwrap().name(), "vic");
        assert!(by_name("aic").is_err());
    }

    proptest! {
        #[test]
        fn concordance_ignores_positive_score_scaling(
            psi in proptest::collection::vec(-5.0f64..5.0, 2..40),
            seed in 0u64..1000,
            scale in 0.1f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = psi.len();
            let psi = DVector::from_vec(psi);
            let s = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = concordance_from_scores(&psi, &s).unwrap();
            let b = concordance_from_scores(&psi, &(&s * scale)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn selection_is_scale_free(
            goodness in proptest::collection::vec(-10.0f64..10.0, 3..20),
            scale in prop_oneof![Just(1e-3), Just(1.0), Just(1e3)],
        ) {
            let df: Vec<usize> = (0..goodness.len()).collect();
            let base = scores(&goodness, &df);
            let scaled = PathScores {
                goodness: goodness.iter().map(|g| g * scale).collect(),
                ..base.clone()
            };
            let a = adaptive_select_scores(&base, &base.gamma_grid(50)).unwrap();
            let b = adaptive_select_scores(&scaled, &scaled.gamma_grid(50)).unwrap();
            prop_assert_eq!(a.lambda_index, b.lambda_index);
        }
    }
}
