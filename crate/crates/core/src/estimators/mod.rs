//! Robust mean estimators for gradient samples.

pub mod cmmom;
pub mod mom;
pub mod select;
pub mod trimmed;

use nalgebra::DMatrix;

pub use cmmom::{cm_mom, cm_mom_scale, estimate_variance_scale, minsker_block_mean, operator_norm, recommended_blocks};
pub use mom::{coordinatewise_mom, group_geometric_mom, make_blocks};
pub use select::select_kth;
pub use trimmed::{alpha_from_budget, coordinatewise_trimmed_mean, trimmed_mean, CorruptionBudget};

use crate::error::{invalid, Result};
use crate::model::GradientSamples;
use crate::Param;

/// How the CM-MOM scale is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScaleChoice {
    Explicit(f64),
    /// Plug a variance guess into [`cm_mom_scale`].
    Auto { v_guess: f64 },
    /// Plug in [`estimate_variance_scale`] computed on the current samples.
    Estimated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EstimatorSpec {
    /// Plain empirical mean (not robust; reference and exact-gradient runs).
    Mean,
    TrimmedMean { alpha: f64 },
    CoordMom { blocks: usize },
    /// Geometric MOM applied to each row of the parameter.
    GroupGeometricMom { blocks: usize },
    CmMom { blocks: usize, scale: ScaleChoice },
}

impl EstimatorSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        let blocks_ok = |k: usize| {
            if k < 1 || k > n {
                Err(invalid(format!("{k} blocks is not in 1..={n}")))
            } else {
                Ok(())
            }
        };
        match *self {
            EstimatorSpec::Mean => Ok(()),
            EstimatorSpec::TrimmedMean { alpha } => {
                if (0.0..0.5).contains(&alpha) {
                    Ok(())
                } else {
                    Err(invalid(format!("trimming level alpha = {alpha} must lie in [0, 1/2)")))
                }
            }
            EstimatorSpec::CoordMom { blocks } | EstimatorSpec::GroupGeometricMom { blocks } => blocks_ok(blocks),
            EstimatorSpec::CmMom { blocks, scale } => {
                blocks_ok(blocks)?;
                match scale {
                    ScaleChoice::Explicit(v) | ScaleChoice::Auto { v_guess: v } if !(v > 0.0 && v.is_finite()) => {
                        Err(invalid(format!("CM-MOM scale parameter must be positive (got {v})")))
                    }
                    _ => Ok(()),
                }
            }
        }
    }
}

/// An [`EstimatorSpec`] bound to the seed of its block shuffles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimator {
    pub spec: EstimatorSpec,
    pub seed: u64,
}

impl Estimator {
    pub fn new(spec: EstimatorSpec, seed: u64) -> Self {
        Self { spec, seed }
    }

    pub fn estimate(&self, samples: &GradientSamples) -> Result<Param> {
        self.spec.validate(samples.n())?;
        match self.spec {
            EstimatorSpec::Mean => samples.mean(),
            EstimatorSpec::TrimmedMean { alpha } => coordinatewise_trimmed_mean(samples, alpha),
            EstimatorSpec::CoordMom { blocks } => coordinatewise_mom(samples, blocks, self.seed),
            EstimatorSpec::GroupGeometricMom { blocks } => {
                group_geometric_mom(samples, &row_groups(samples.shape()), blocks, self.seed)
            }
            EstimatorSpec::CmMom { blocks, scale } => {
                let (p, q) = samples.shape();
                let matrices: Vec<DMatrix<f64>> = (0..samples.n()).map(|i| samples.sample(i)).collect();
                let m = samples.n() / blocks;
                let chi = match scale {
                    ScaleChoice::Explicit(chi) => chi,
                    ScaleChoice::Auto { v_guess } => cm_mom_scale(m, v_guess, p, q)?,
                    ScaleChoice::Estimated => cm_mom_scale(m, estimate_variance_scale(&matrices, 0.1)?, p, q)?,
                };
                cm_mom(&matrices, blocks, chi, self.seed)
            }
        }
    }
}

/// Flattened (column-major) indices of each row of a `rows x cols` parameter.
pub fn row_groups((rows, cols): (usize, usize)) -> Vec<Vec<usize>> {
    (0..rows).map(|r| (0..cols).map(|c| r + c * rows).collect()).collect()
}

/// Robust plug-in for the largest coordinate standard deviation of the
/// gradient: square root of the largest trimmed second central moment.
pub fn sigma_max_estimate(samples: &GradientSamples, alpha: f64) -> Result<f64> {
    let mut best: f64 = 0.0;
    for j in 0..samples.dim() {
        let col = samples.coordinate(j);
        let center = trimmed_mean(col, alpha)?;
        let sq: Vec<f64> = col.iter().map(|v| (v - center).powi(2)).collect();
        best = best.max(trimmed_mean(&sq, alpha)?);
    }
    Ok(best.sqrt())
}

/// Deviation level `7 sigma_max sqrt(4 eta + 6 (log(4/delta) + log d) / n)`
/// of the coordinatewise trimmed mean, used as the theoretical accuracy input.
pub fn trimmed_mean_accuracy(sigma_max: f64, eta: f64, delta: f64, d: usize, n: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) || n == 0 || d == 0 || !(0.0..0.5).contains(&eta) {
        return Err(invalid("accuracy bound needs delta in (0, 1), eta in [0, 1/2) and positive n, d"));
    }
    Ok(7.0 * sigma_max * (4.0 * eta + 6.0 * ((4.0 / delta).ln() + (d as f64).ln()) / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn samples(n: usize, shape: (usize, usize), seed: u64) -> GradientSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GradientSamples::new(DMatrix::from_fn(n, shape.0 * shape.1, |_, _| rng.random_range(-1.0..1.0)), shape).unwrap()
    }

    #[test]
    fn row_groups_cover_rows() {
        assert_eq!(row_groups((2, 3)), vec![vec![0, 2, 4], vec![1, 3, 5]]);
    }

    #[test]
    fn single_block_estimators_agree_with_mean() {
        let s = samples(40, (3, 2), 1);
        let mean = s.mean().unwrap();
        for spec in [EstimatorSpec::CoordMom { blocks: 1 }, EstimatorSpec::GroupGeometricMom { blocks: 1 }] {
            let est = Estimator::new(spec, 3).estimate(&s).unwrap();
            assert!((est - &mean).norm() < 1e-12);
        }
        let cm = Estimator::new(EstimatorSpec::CmMom { blocks: 1, scale: ScaleChoice::Explicit(1e5) }, 3)
            .estimate(&s)
            .unwrap();
        assert!((cm - &mean).norm() < 1e-4 * mean.norm());
    }

    #[test]
    fn spec_validation() {
        assert!(EstimatorSpec::TrimmedMean { alpha: 0.5 }.validate(10).is_err());
        assert!(EstimatorSpec::CoordMom { blocks: 11 }.validate(10).is_err());
        assert!(EstimatorSpec::CmMom { blocks: 2, scale: ScaleChoice::Explicit(0.0) }.validate(10).is_err());
        assert!(EstimatorSpec::CmMom { blocks: 2, scale: ScaleChoice::Estimated }.validate(10).is_ok());
        let s = samples(8, (2, 2), 2);
        assert!(Estimator::new(EstimatorSpec::CoordMom { blocks: 9 }, 0).estimate(&s).is_err());
    }

    #[test]
    fn estimated_scale_runs() {
        let s = samples(60, (2, 2), 3);
        let est = Estimator::new(EstimatorSpec::CmMom { blocks: 5, scale: ScaleChoice::Estimated }, 1).estimate(&s);
        assert!(est.unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn accuracy_helper() {
        let s = samples(400, (3, 1), 4);
        let sigma = sigma_max_estimate(&s, 0.1).unwrap();
        // Uniform(-1, 1): sd = 0.577; trimming shrinks the estimate.
        assert!(sigma > 0.4 && sigma < 0.65, "{sigma}");
        let eps = trimmed_mean_accuracy(1.0, 0.0, 0.04, 1, 600).unwrap();
        assert!((eps - 7.0 * (6.0 * 100f64.ln() / 600.0).sqrt()).abs() < 1e-12);
    }
}
