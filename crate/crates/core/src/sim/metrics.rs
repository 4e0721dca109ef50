//! Held-out evaluation against the generator truth.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{stream, Purpose, SimScenario};
use crate::error::{Error, Result};
use crate::model::{decision_from_score, StackedCoefficients};

/// Test points for one site with both potential outcomes (original scale).
#[derive(Debug, Clone, PartialEq)]
pub struct TestSite {
    pub x: DMatrix<f64>,
    pub y_pos: Option<DVector<f64>>,
    pub y_neg: Option<DVector<f64>>,
    pub cate: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestDraw {
    pub sites: Vec<TestSite>,
}

/// Draws `m` test points per site. Both potential outcomes share one noise
/// draw, so the better arm is always the sign of the treatment effect.
pub fn draw_test(scenario: &SimScenario, m: usize) -> TestDraw {
    let mut rng = stream(scenario.seed, scenario.replication, Purpose::Test);
    let sites = (0..scenario.k)
        .map(|k| {
            let x = scenario.draw_covariates(&mut rng, k, m);
            let mut y_pos = DVector::zeros(m);
            let mut y_neg = DVector::zeros(m);
            let mut cate = DVector::zeros(m);
            for i in 0..m {
                let xi: Vec<f64> = x.row(i).iter().copied().collect();
                let mu = scenario.main_effect(k, &xi);
                let delta = scenario.true_cate(k, &xi);
                let eps: f64 = rng.sample(StandardNormal);
                y_pos[i] = mu + delta + eps;
                y_neg[i] = mu - delta + eps;
                cate[i] = delta;
            }
            TestSite {
                x,
                y_pos: Some(y_pos),
                y_neg: Some(y_neg),
                cate,
            }
        })
        .collect();
    TestDraw { sites }
}

/// Per-site decision rules to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleSet {
    /// Linear scores on the listed (0-based) features; decision `-sign(f)`.
    Linear {
        coefficients: StackedCoefficients,
        features: Vec<usize>,
    },
    /// Treat exactly when the true effect is positive.
    Oracle,
    /// The same arm for everyone.
    Constant(f64),
}

/// Decision that maximizes the outcome at a point with effect `cate`;
/// zero effect maps to control.
pub fn optimal_decision(cate: f64) -> f64 {
    decision_from_score(-cate)
}

impl RuleSet {
    pub fn decisions(&self, k: usize, site: &TestSite) -> Result<Vec<f64>> {
        let m = site.x.nrows();
        match self {
            RuleSet::Linear { coefficients, features } => {
                if coefficients.p() != features.len() || k >= coefficients.k() {
                    return Err(Error::DimensionMismatch("rule does not match the test features".into()));
                }
                let coef = coefficients.site(k);
                Ok((0..m)
                    .map(|i| {
                        let f = coef[0]
                            + features
                                .iter()
                                .enumerate()
                                .map(|(c, &j)| coef[c + 1] * site.x[(i, j)])
                                .sum::<f64>();
                        decision_from_score(f)
                    })
                    .collect())
            }
            RuleSet::Oracle => Ok(site.cate.iter().map(|&d| optimal_decision(d)).collect()),
            RuleSet::Constant(d) => Ok(vec![*d; m]),
        }
    }
}

/// Mean over sites of `mean Y(d) / mean Y(d_opt)`.
pub fn relative_value(rules: &RuleSet, test: &TestDraw) -> Result<f64> {
    let mut total = 0.0;
    for (k, site) in test.sites.iter().enumerate() {
        let (pos, neg) = match (&site.y_pos, &site.y_neg) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::MissingPotentialOutcomes),
        };
        let d = rules.decisions(k, site)?;
        let pick = |i: usize, d: f64| if d > 0.0 { pos[i] } else { neg[i] };
        let m = d.len();
        let value: f64 = (0..m).map(|i| pick(i, d[i])).sum();
        let best: f64 = (0..m).map(|i| pick(i, optimal_decision(site.cate[i]))).sum();
        total += value / best;
    }
    Ok(total / test.sites.len() as f64)
}

/// Mean over sites of the share of points where the rule picks the better arm.
pub fn rule_accuracy(rules: &RuleSet, test: &TestDraw) -> Result<f64> {
    let mut total = 0.0;
    for (k, site) in test.sites.iter().enumerate() {
        let d = rules.decisions(k, site)?;
        let hits = d
            .iter()
            .zip(site.cate.iter())
            .filter(|(&d, &c)| d == optimal_decision(c))
            .count();
        total += hits as f64 / d.len() as f64;
    }
    Ok(total / test.sites.len() as f64)
}
