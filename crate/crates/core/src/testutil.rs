use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::loss::{LearnerKind, ResidualizedSite};
use crate::model::StackedCoefficients;

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Random prepared sites with the weight/contrast pattern of `kind`.
pub fn random_residualized<R: Rng>(
    rng: &mut R,
    kind: LearnerKind,
    k: usize,
    ns: &[usize],
    p: usize,
) -> Vec<ResidualizedSite> {
    assert_eq!(ns.len(), k);
    ns.iter()
        .enumerate()
        .map(|(site, &n)| {
            let x = DMatrix::from_fn(n, p, |_, _| normal(rng));
            let y = DVector::from_fn(n, |_, _| normal(rng) + 0.5);
            let t: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let (weight, contrast) = match kind {
                LearnerKind::Weighted => (
                    DVector::from_fn(n, |_, _| rng.random_range(0.5..3.0)),
                    DVector::from_vec(t),
                ),
                LearnerKind::ALearning => {
                    let pi: f64 = rng.random_range(0.2..0.8);
                    (
                        DVector::from_element(n, 1.0),
                        DVector::from_fn(n, |i, _| (t[i] + 1.0) / 2.0 - pi),
                    )
                }
            };
            ResidualizedSite {
                site_id: site as u32 + 1,
                kind,
                x,
                y,
                weight,
                contrast,
            }
        })
        .collect()
}

pub fn random_stacked<R: Rng>(rng: &mut R, p: usize, k: usize) -> StackedCoefficients {
    StackedCoefficients {
        intercepts: DVector::from_fn(k, |_, _| normal(rng)),
        blocks: DMatrix::from_fn(p, k, |_, _| normal(rng)),
    }
}
