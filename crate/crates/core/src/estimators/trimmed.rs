//! Winsorized trimmed mean with quantiles taken on the first half of the sample.

use crate::error::{invalid, Error, Result};
use crate::model::GradientSamples;
use crate::Param;

/// Allowed corruption regime for [`alpha_from_budget`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptionBudget {
    /// Fraction of corrupted samples, `0 <= eta < 1/8`.
    pub eta: f64,
    /// Failure probability.
    pub delta: f64,
    pub n: usize,
}

/// Trimming level `alpha = 8 eta + 12 log(4 / delta) / n`.
pub fn alpha_from_budget(budget: CorruptionBudget) -> Result<f64> {
    let CorruptionBudget { eta, delta, n } = budget;
    if !(0.0..0.125).contains(&eta) {
        return Err(invalid(format!("eta = {eta} must lie in [0, 1/8)")));
    }
    if n == 0 {
        return Err(invalid("sample count must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    let alpha = 8.0 * eta + 12.0 * (4.0 / delta).ln() / n as f64;
    if alpha >= 0.5 {
        return Err(Error::BudgetInfeasible { alpha });
    }
    Ok(alpha)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(invalid(format!("trimming level alpha = {alpha} must lie in [0, 1/2)")));
    }
    Ok(())
}

/// 1-based ranks of the lower and upper quantiles among `half` order statistics.
pub(crate) fn quantile_ranks(alpha: f64, half: usize) -> (usize, usize) {
    let h = half as f64;
    let rank = |x: f64| (x.floor() as usize).clamp(1, half);
    (rank(alpha * h), rank((1.0 - alpha) * h))
}

/// Trimmed mean of `values`. With an odd count the last value is ignored.
///
/// The clipping thresholds are order statistics of the first half; the
/// average is taken over the clipped second half.
pub fn trimmed_mean(values: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if values.len() < 2 {
        return Err(invalid("trimmed mean needs at least 2 samples"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("trimmed mean input must be finite"));
    }
    let mut scratch = Vec::with_capacity(values.len() / 2);
    Ok(trimmed_mean_unchecked(values, alpha, &mut scratch))
}

/// Same as [`trimmed_mean`] without validation, reusing `scratch`.
pub(crate) fn trimmed_mean_unchecked(values: &[f64], alpha: f64, scratch: &mut Vec<i64>) -> f64 {
    let half = values.len() / 2;
    let (lo_rank, hi_rank) = quantile_ranks(alpha, half);
    scratch.clear();
    scratch.extend(values[..half].iter().map(|&x| order_key(x)));
    let q_lo = from_order_key(*scratch.select_nth_unstable(lo_rank - 1).1);
    let q_hi = from_order_key(*scratch[lo_rank - 1..].select_nth_unstable(hi_rank - lo_rank).1);
    let sum: f64 = values[half..2 * half].iter().map(|&x| x.clamp(q_lo, q_hi)).sum();
    sum / half as f64
}

/// Integer with the same ordering as `f64::total_cmp`; selecting on keys is
/// faster than comparing floats.
fn order_key(x: f64) -> i64 {
    let bits = x.to_bits() as i64;
    bits ^ (((bits >> 63) as u64) >> 1) as i64
}

fn from_order_key(key: i64) -> f64 {
    f64::from_bits((key ^ (((key >> 63) as u64) >> 1) as i64) as u64)
}

/// Applies [`trimmed_mean`] to every gradient coordinate independently.
pub fn coordinatewise_trimmed_mean(samples: &GradientSamples, alpha: f64) -> Result<Param> {
    check_alpha(alpha)?;
    if samples.n() < 2 {
        return Err(invalid("trimmed mean needs at least 2 samples"));
    }
    let mut scratch = Vec::with_capacity(samples.n() / 2);
    let values = (0..samples.dim())
        .map(|j| {
            let column = samples.coordinate(j);
            if column.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("gradient samples contain non-finite values".into()));
            }
            Ok(trimmed_mean_unchecked(column, alpha, &mut scratch))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(samples.reshape(values))
}
