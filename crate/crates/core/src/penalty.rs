//! Block penalties and their proximal steps.
//!
//! The cooperative penalty `sum_j ||(b_j)+|| + ||(b_j)-||` acts on coordinate
//! blocks (one feature across all sites). It shrinks the positive and the
//! negative entries of a block separately, so a block whose sites disagree in
//! sign pays for both parts. The group-lasso penalty and the unpenalized case
//! share the same interface for the baselines.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::StackedCoefficients;
use crate::registry::Registry;

/// Componentwise split of a vector by sign. `pos + neg` reproduces the input.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedParts {
    pub pos: DVector<f64>,
    /// Negative entries, kept with their sign.
    pub neg: DVector<f64>,
}

pub fn signed_parts(v: &DVector<f64>) -> Result<SignedParts> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("signed_parts input".into()));
    }
    Ok(SignedParts {
        pos: v.map(|x| if x > 0.0 { x } else { 0.0 }),
        neg: v.map(|x| if x < 0.0 { x } else { 0.0 }),
    })
}

/// Euclidean norms of the positive and negative parts.
pub fn part_norms(v: &DVector<f64>) -> (f64, f64) {
    let (mut pos, mut neg) = (0.0, 0.0);
    for &x in v.iter() {
        if x > 0.0 {
            pos += x * x;
        } else if x < 0.0 {
            neg += x * x;
        }
    }
    (pos.sqrt(), neg.sqrt())
}

/// Cooperative penalty of one block.
pub fn coop_block_value(v: &DVector<f64>) -> f64 {
    let (pos, neg) = part_norms(v);
    pos + neg
}

/// `P(beta) = sum_j ||(beta_j)+|| + ||(beta_j)-||`; intercepts are excluded.
pub fn penalty_value(beta: &StackedCoefficients) -> f64 {
    (0..beta.p()).map(|j| coop_block_value(&beta.block(j))).sum()
}

/// Norms within this relative distance of lambda count as on the threshold.
/// Without it, `gamma * ||z||` with `z = -g / gamma` can round a hair above
/// `||g||` and leave ~1e-16 coefficients at lambda_max.
pub const THRESHOLD_RTOL: f64 = 1e-12;

/// `(1 - lambda / norm)_+`, with the factor taken as 0 when `norm` is 0 or
/// within a relative [`THRESHOLD_RTOL`] of `lambda`.
#[inline]
pub fn shrink_factor(lambda: f64, norm: f64) -> f64 {
    if norm > 0.0 && norm > lambda * (1.0 + THRESHOLD_RTOL) {
        (1.0 - lambda / norm).max(0.0)
    } else {
        0.0
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "curvature must be positive, got {gamma}"
        )))
    }
}

/// Minimizer of `(gamma/2)||b - z||^2 + lambda(||b+|| + ||b-||)`.
///
/// Positive entries of `z` are scaled by `(1 - lambda/||(gamma z)+||)_+`,
/// negative ones by the same expression on the negative part; zeros stay zero.
pub fn coop_prox(z: &DVector<f64>, gamma: f64, lambda: f64) -> Result<DVector<f64>> {
    check_gamma(gamma)?;
    if lambda == 0.0 {
        return Ok(z.clone());
    }
    let (pos, neg) = part_norms(z);
    let fp = shrink_factor(lambda, gamma * pos);
    let fn_ = shrink_factor(lambda, gamma * neg);
    Ok(z.map(|v| {
        if v > 0.0 {
            v * fp
        } else if v < 0.0 {
            v * fn_
        } else {
            0.0
        }
    }))
}

/// Group soft-threshold `z (1 - lambda / (gamma ||z||))_+`.
pub fn group_prox(z: &DVector<f64>, gamma: f64, lambda: f64) -> Result<DVector<f64>> {
    check_gamma(gamma)?;
    if lambda == 0.0 {
        return Ok(z.clone());
    }
    Ok(z * shrink_factor(lambda, gamma * z.norm()))
}

/// Size of the KKT violation of one cooperative block.
///
/// `grad_j` is the gradient of the smooth loss. Nonzero entries must satisfy
/// `g_k + lambda b_k / ||phi_k(b)|| = 0`; zero entries must have the matching
/// sign part of `-g` inside the lambda ball when that part of `b` is empty,
/// and vanish otherwise.
pub fn kkt_residual(grad_j: &DVector<f64>, beta_j: &DVector<f64>, lambda: f64) -> f64 {
    let (bpos, bneg) = part_norms(beta_j);
    let mut active = 0.0;
    let (mut hpos, mut hneg) = (0.0, 0.0);
    for (&g, &b) in grad_j.iter().zip(beta_j.iter()) {
        if b > 0.0 {
            let r = g + lambda * b / bpos;
            active += r * r;
        } else if b < 0.0 {
            let r = g + lambda * b / bneg;
            active += r * r;
        } else {
            let h = -g;
            if h > 0.0 {
                hpos += h * h;
            } else {
                hneg += h * h;
            }
        }
    }
    let (hpos, hneg) = (hpos.sqrt(), hneg.sqrt());
    let pos_violation = if bpos > 0.0 { hpos } else { (hpos - lambda).max(0.0) };
    let neg_violation = if bneg > 0.0 { hneg } else { (hneg - lambda).max(0.0) };
    active.sqrt().max(pos_violation).max(neg_violation)
}

/// KKT violation for a group-lasso block.
pub fn group_kkt_residual(grad_j: &DVector<f64>, beta_j: &DVector<f64>, lambda: f64) -> f64 {
    let nb = beta_j.norm();
    if nb > 0.0 {
        (grad_j + beta_j * (lambda / nb)).norm()
    } else {
        (grad_j.norm() - lambda).max(0.0)
    }
}

/// A block-separable penalty usable by the coordinate-descent solver.
pub trait Penalty: Send + Sync {
    fn name(&self) -> &'static str;

    /// Penalty contribution of one block (without the lambda factor).
    fn block_value(&self, block: &DVector<f64>) -> f64;

    /// Proximal step for a block with curvature `gamma`.
    fn prox(&self, z: &DVector<f64>, gamma: f64, lambda: f64) -> Result<DVector<f64>>;

    /// Smallest lambda at which a zero block is optimal for gradient `grad`.
    fn zero_threshold(&self, grad: &DVector<f64>) -> f64;

    fn kkt_residual(&self, grad: &DVector<f64>, block: &DVector<f64>, lambda: f64) -> f64;

    /// Whether the penalty shrinks anything; the unpenalized fit needs no path.
    fn is_penalized(&self) -> bool {
        true
    }

    fn value(&self, beta: &StackedCoefficients) -> f64 {
        (0..beta.p()).map(|j| self.block_value(&beta.block(j))).sum()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CoopPenalty;

impl Penalty for CoopPenalty {
    fn name(&self) -> &'static str {
        "coop"
    }

    fn block_value(&self, block: &DVector<f64>) -> f64 {
        coop_block_value(block)
    }

    fn prox(&self, z: &DVector<f64>, gamma: f64, lambda: f64) -> Result<DVector<f64>> {
        coop_prox(z, gamma, lambda)
    }

    fn zero_threshold(&self, grad: &DVector<f64>) -> f64 {
        let (pos, neg) = part_norms(&(-grad));
        pos.max(neg)
    }

    fn kkt_residual(&self, grad: &DVector<f64>, block: &DVector<f64>, lambda: f64) -> f64 {
        kkt_residual(grad, block, lambda)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GroupPenalty;

impl Penalty for GroupPenalty {
    fn name(&self) -> &'static str {
        "group"
    }

    fn block_value(&self, block: &DVector<f64>) -> f64 {
        block.norm()
    }

    fn prox(&self, z: &DVector<f64>, gamma: f64, lambda: f64) -> Result<DVector<f64>> {
        group_prox(z, gamma, lambda)
    }

    fn zero_threshold(&self, grad: &DVector<f64>) -> f64 {
        grad.norm()
    }

    fn kkt_residual(&self, grad: &DVector<f64>, block: &DVector<f64>, lambda: f64) -> f64 {
        group_kkt_residual(grad, block, lambda)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoPenalty;

impl Penalty for NoPenalty {
    fn name(&self) -> &'static str {
        "none"
    }

    fn block_value(&self, _block: &DVector<f64>) -> f64 {
        0.0
    }

    fn prox(&self, z: &DVector<f64>, gamma: f64, _lambda: f64) -> Result<DVector<f64>> {
        check_gamma(gamma)?;
        Ok(z.clone())
    }

    fn zero_threshold(&self, _grad: &DVector<f64>) -> f64 {
        f64::INFINITY
    }

    fn kkt_residual(&self, grad: &DVector<f64>, _block: &DVector<f64>, _lambda: f64) -> f64 {
        grad.amax()
    }

    fn is_penalized(&self) -> bool {
        false
    }
}

pub fn registry() -> Registry<dyn Penalty> {
    let mut reg: Registry<dyn Penalty> = Registry::new("penalty");
    reg.register("coop", || Box::new(CoopPenalty))
        .register("group", || Box::new(GroupPenalty))
        .register("none", || Box::new(NoPenalty));
    reg
}

pub fn by_name(name: &str) -> Result<Box<dyn Penalty>> {
    registry().create(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn prox_objective(b: &DVector<f64>, z: &DVector<f64>, gamma: f64, lambda: f64) -> f64 {
        0.5 * gamma * (b - z).norm_squared() + lambda * coop_block_value(b)
    }

    #[test]
    fn signed_parts_examples() {
        let parts = signed_parts(&dv(&[1.0, 2.0, 3.0, -1.0, -2.0, -3.0])).unwrap();
        assert_eq!(parts.pos, dv(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]));
        assert_eq!(parts.neg, dv(&[0.0, 0.0, 0.0, -1.0, -2.0, -3.0]));
        let zero = signed_parts(&dv(&[0.0, 0.0])).unwrap();
        assert_eq!(zero.pos, dv(&[0.0, 0.0]));
        assert_eq!(zero.neg, dv(&[0.0, 0.0]));
        let single = signed_parts(&dv(&[-5.0])).unwrap();
        assert_eq!(single.pos, dv(&[0.0]));
        assert_eq!(single.neg, dv(&[-5.0]));
        assert!(signed_parts(&dv(&[f64::INFINITY])).is_err());
    }

    #[test]
    fn penalty_value_examples() {
        let mut beta = StackedCoefficients::zeros(1, 6);
        beta.set_block(0, &dv(&[1.0, 2.0, 3.0, -1.0, -2.0, -3.0]));
        assert!((penalty_value(&beta) - 2.0 * 14f64.sqrt()).abs() < 1e-12);
        assert!((penalty_value(&beta) - 7.4833).abs() < 1e-4);
        assert_eq!(penalty_value(&StackedCoefficients::zeros(3, 2)), 0.0);
        let mut coherent = StackedCoefficients::zeros(1, 3);
        coherent.set_block(0, &dv(&[2.0, 0.0, 1.0]));
        assert!((penalty_value(&coherent) - 2.2361).abs() < 1e-4);
    }

    #[test]
    fn coop_prox_examples() {
        let z = dv(&[3.0, -4.0]);
        assert_eq!(coop_prox(&z, 1.0, 0.0).unwrap(), z);
        assert_eq!(coop_prox(&z, 1.0, 10.0).unwrap(), dv(&[0.0, 0.0]));
        let out = coop_prox(&z, 1.0, 1.0).unwrap();
        assert!((out - dv(&[2.0, -3.0])).amax() < 1e-12);
        assert!(coop_prox(&z, 0.0, 1.0).is_err());
        assert!(coop_prox(&z, -1.0, 1.0).is_err());
    }

    #[test]
    fn coop_prox_matches_radial_grid_search() {
        // Scalar grid over each part's magnitude, resolution 1e-4.
        let z = dv(&[3.0, -4.0]);
        let grid = |norm: f64| {
            let mut best = (f64::INFINITY, 0.0);
            let steps = (norm / 1e-4).ceil() as usize;
            for s in 0..=steps {
                let r = s as f64 * 1e-4;
                let obj = 0.5 * (r - norm).powi(2) + r;
                if obj < best.0 {
                    best = (obj, r);
                }
            }
            best.1
        };
        let out = coop_prox(&z, 1.0, 1.0).unwrap();
        assert!((out[0] - grid(3.0)).abs() < 1e-3);
        assert!((out[1] + grid(4.0)).abs() < 1e-3);
    }

    #[test]
    fn group_prox_examples() {
        let z = dv(&[3.0, -4.0]);
        assert_eq!(group_prox(&z, 1.0, 0.0).unwrap(), z);
        assert_eq!(group_prox(&z, 1.0, 5.0).unwrap(), dv(&[0.0, 0.0]));
        let out = group_prox(&z, 1.0, 1.0).unwrap();
        assert!((out - dv(&[2.4, -3.2])).amax() < 1e-12);
        assert!(group_prox(&z, 0.0, 1.0).is_err());
    }

    #[test]
    fn kkt_residual_examples() {
        let zero = dv(&[0.0, 0.0, 0.0]);
        assert_eq!(kkt_residual(&dv(&[0.3, -0.4, 0.1]), &zero, 1.0), 0.0);
        assert_eq!(kkt_residual(&dv(&[0.0, 0.0]), &dv(&[0.0, 0.0]), 0.0), 0.0);
        // Zero block with a large positive part of -g violates by the excess.
        let r = kkt_residual(&dv(&[-3.0, 0.0]), &dv(&[0.0, 0.0]), 1.0);
        assert!((r - 2.0).abs() < 1e-12);
        // Prox fixed points satisfy KKT: for quadratic (gamma/2)||b - c||^2
        // with gradient gamma (b - c), the minimizer is prox(c).
        let c = dv(&[3.0, -4.0, 0.5]);
        let gamma = 2.0;
        let b = coop_prox(&c, gamma, 1.5).unwrap();
        let g = (&b - &c) * gamma;
        assert!(kkt_residual(&g, &b, 1.5) < 1e-12);
    }

    #[test]
    fn registry_names() {
        let reg = registry();
        assert_eq!(reg.names(), vec!["coop", "group", "none"]);
        assert!(!by_name("none").unwrap().is_penalized());
        assert!(by_name("lasso").is_err());
    }

    proptest! {
        #[test]
        fn parts_reconstruct(v in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
            let v = DVector::from_vec(v);
            let parts = signed_parts(&v).unwrap();
            prop_assert_eq!(&parts.pos + &parts.neg, v);
            prop_assert!(parts.pos.iter().all(|&x| x >= 0.0));
            prop_assert!(parts.neg.iter().all(|&x| x <= 0.0));
            prop_assert!(parts.pos.iter().zip(parts.neg.iter()).all(|(a, b)| *a == 0.0 || *b == 0.0));
        }

        #[test]
        fn prox_preserves_signs_and_is_optimal(
            z in proptest::collection::vec(-5.0f64..5.0, 1..6),
            gamma in 0.1f64..5.0,
            lambda in 0.0f64..5.0,
            dir in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            let z = DVector::from_vec(z);
            let b = coop_prox(&z, gamma, lambda).unwrap();
            for (bi, zi) in b.iter().zip(z.iter()) {
                prop_assert!(*bi == 0.0 || bi.signum() == zi.signum());
            }
            let base = prox_objective(&b, &z, gamma, lambda);
            let d = DVector::from_fn(z.len(), |i, _| dir[i]);
            for step in [1e-3, 1e-2, 1e-1] {
                let probe = &b + &d * step;
                prop_assert!(prox_objective(&probe, &z, gamma, lambda) >= base - 1e-12);
            }
        }

        #[test]
        fn prox_norm_monotone_in_lambda(
            z in proptest::collection::vec(-5.0f64..5.0, 1..6),
            gamma in 0.1f64..5.0,
            l1 in 0.0f64..5.0,
            dl in 0.0f64..5.0,
        ) {
            let z = DVector::from_vec(z);
            let a = coop_prox(&z, gamma, l1).unwrap().norm();
            let b = coop_prox(&z, gamma, l1 + dl).unwrap().norm();
            prop_assert!(b <= a + 1e-12);
        }

        #[test]
        fn penalty_norm_band(blocks in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..5)) {
            let sites: Vec<DVector<f64>> = (0..3)
                .map(|k| DVector::from_fn(blocks.len() + 1, |i, _| if i == 0 { 1.0 } else { blocks[i - 1][k] }))
                .collect();
            let beta = StackedCoefficients::from_sites(&sites).unwrap();
            let group: f64 = (0..beta.p()).map(|j| beta.block(j).norm()).sum();
            let p = penalty_value(&beta);
            prop_assert!(p <= 2.0 * group + 1e-12);
            prop_assert!(p >= group / 2f64.sqrt() - 1e-12);
            let coherent = blocks.iter().all(|b| b.iter().all(|&v| v >= 0.0) || b.iter().all(|&v| v <= 0.0));
            if coherent {
                prop_assert!((p - group).abs() < 1e-12);
            }
        }
    }
}
