//! Estimators compared in the benchmark, selectable by name.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::metrics::RuleSet;
use super::SimScenario;
use crate::error::Result;
use crate::estimator::{fit_with_nuisances, prepare_sites};
use crate::model::{FitConfig, MultiSiteData, StackedCoefficients};
use crate::nuisance::NuisanceEstimates;
use crate::registry::Registry;
use crate::solver::{fit_pooled, fit_separate};

/// Everything a method may use. `data` is the estimator view (negated
/// outcomes, hidden features removed).
pub struct MethodContext<'a> {
    pub data: &'a MultiSiteData,
    pub nuisances: &'a [NuisanceEstimates],
    pub fit: &'a FitConfig,
    pub scenario: &'a SimScenario,
}

impl MethodContext<'_> {
    fn linear(&self, coefficients: StackedCoefficients) -> RuleSet {
        RuleSet::Linear {
            coefficients,
            features: self.scenario.visible_features(),
        }
    }
}

pub trait SimMethod: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, ctx: &MethodContext) -> Result<RuleSet>;
}

fn with_learner(cfg: &FitConfig, learner: &str, penalty: &str) -> FitConfig {
    FitConfig {
        learner: learner.into(),
        penalty: penalty.into(),
        ..cfg.clone()
    }
}

/// Penalized multi-site fit with adaptive lambda selection.
pub struct Penalized {
    pub name: &'static str,
    pub learner: &'static str,
    pub penalty: &'static str,
}

impl SimMethod for Penalized {
    fn name(&self) -> &'static str {
        self.name
    }

    fn fit(&self, ctx: &MethodContext) -> Result<RuleSet> {
        let cfg = with_learner(ctx.fit, self.learner, self.penalty);
        let fit = fit_with_nuisances(ctx.data, ctx.nuisances, &cfg)?;
        Ok(ctx.linear(fit.coefficients))
    }
}

/// One rule fitted on all sites' rows.
pub struct Pooled {
    pub name: &'static str,
    pub learner: &'static str,
}

impl SimMethod for Pooled {
    fn name(&self) -> &'static str {
        self.name
    }

    fn fit(&self, ctx: &MethodContext) -> Result<RuleSet> {
        let sites = prepare_sites(ctx.data, ctx.nuisances, &with_learner(ctx.fit, self.learner, "none"))?;
        let coef = fit_pooled(&sites)?;
        Ok(ctx.linear(StackedCoefficients::broadcast(&coef, sites.len())?))
    }
}

/// Each site fitted alone.
pub struct Separate {
    pub name: &'static str,
    pub learner: &'static str,
}

impl SimMethod for Separate {
    fn name(&self) -> &'static str {
        self.name
    }

    fn fit(&self, ctx: &MethodContext) -> Result<RuleSet> {
        let sites = prepare_sites(ctx.data, ctx.nuisances, &with_learner(ctx.fit, self.learner, "none"))?;
        Ok(ctx.linear(fit_separate(&sites)?))
    }
}

/// The true sign of the treatment effect.
pub struct Oracle;

impl SimMethod for Oracle {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn fit(&self, _ctx: &MethodContext) -> Result<RuleSet> {
        Ok(RuleSet::Oracle)
    }
}

/// Best linear rule per site: least-squares projection of the true effect
/// onto the visible features, over a large sample from that site.
pub struct BestLinear {
    pub sample_size: usize,
}

impl SimMethod for BestLinear {
    fn name(&self) -> &'static str {
        "BLDR"
    }

    fn fit(&self, ctx: &MethodContext) -> Result<RuleSet> {
        let s = ctx.scenario;
        let visible = s.visible_features();
        let q = visible.len() + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0xB1D2);
        rng.set_stream(s.replication);
        let mut per_site = Vec::with_capacity(s.k);
        for k in 0..s.k {
            let mut gram = DMatrix::zeros(q, q);
            let mut rhs = DVector::zeros(q);
            let mut row = DVector::zeros(q);
            let mut x = vec![0.0; s.p];
            for _ in 0..self.sample_size {
                for (j, v) in x.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = z + s.covariate_shift[k][j];
                }
                row[0] = 1.0;
                for (c, &j) in visible.iter().enumerate() {
                    row[c + 1] = x[j];
                }
                // The score is negated: lower scores mean treat.
                let target = -s.true_cate(k, &x);
                gram.ger(1.0, &row, &row, 1.0);
                rhs.axpy(target, &row, 1.0);
            }
            let coef = gram
                .cholesky()
                .map(|c| c.solve(&rhs))
                .ok_or_else(|| crate::error::Error::Numerical("best linear rule is singular".into()))?;
            per_site.push(coef);
        }
        Ok(ctx.linear(StackedCoefficients::from_sites(&per_site)?))
    }
}

/// Methods run when none are named.
pub const DEFAULT_METHODS: [&str; 7] = [
    "MA-W",
    "MA-A",
    "pooled-W",
    "pooled-A",
    "separate-W",
    "separate-A",
    "group-A",
];

pub fn method_registry() -> Registry<dyn SimMethod> {
    let mut reg: Registry<dyn SimMethod> = Registry::new("method");
    reg.register("MA-W", || Box::new(Penalized { name: "MA-W", learner: "weighted", penalty: "coop" }))
        .register("MA-A", || Box::new(Penalized { name: "MA-A", learner: "alearning", penalty: "coop" }))
        .register("group-A", || Box::new(Penalized { name: "group-A", learner: "alearning", penalty: "group" }))
        .register("group-W", || Box::new(Penalized { name: "group-W", learner: "weighted", penalty: "group" }))
        .register("pooled-W", || Box::new(Pooled { name: "pooled-W", learner: "weighted" }))
        .register("pooled-A", || Box::new(Pooled { name: "pooled-A", learner: "alearning" }))
        .register("separate-W", || Box::new(Separate { name: "separate-W", learner: "weighted" }))
        .register("separate-A", || Box::new(Separate { name: "separate-A", learner: "alearning" }))
        .register("oracle", || Box::new(Oracle))
        .register("BLDR", || Box::new(BestLinear { sample_size: 100_000 }));
    reg
}
