//! Matrix mean estimation robust in operator norm: Catoni-Minsker block means
//! computed on the symmetric dilation, followed by a median-of-means style
//! selection among blocks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::estimators::mom::{geometric_selection, make_blocks};
use crate::estimators::trimmed::trimmed_mean_unchecked;

/// Odd extension of `log(1 + |x| + x^2 / 2)`.
pub fn psi(x: f64) -> f64 {
    x.signum() * (x.abs() + 0.5 * x * x).ln_1p()
}

/// Number of blocks `ceil(18 log(1 / delta))` for failure probability `delta`.
pub fn recommended_blocks(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    Ok((18.0 * (1.0 / delta).ln()).ceil().max(1.0) as usize)
}

/// Scale `chi = sqrt(2 m log(8 (p + q)) / v)` for blocks of size `m`.
pub fn cm_mom_scale(m: usize, v_guess: f64, p: usize, q: usize) -> Result<f64> {
    if m == 0 || p == 0 || q == 0 {
        return Err(invalid("block size and matrix dimensions must be positive"));
    }
    if !(v_guess > 0.0 && v_guess.is_finite()) {
        return Err(invalid(format!("variance guess must be positive (got {v_guess})")));
    }
    Ok((2.0 * m as f64 * (8.0 * (p + q) as f64).ln() / v_guess).sqrt())
}

/// Robust plug-in for the matrix variance `v(A)`.
///
/// Entry variances are trimmed means of squared deviations from the
/// coordinatewise trimmed mean; `v` is then the largest row or column sum of
/// those variances, i.e. the largest diagonal entry of `E (A-mu)(A-mu)^T` or
/// `E (A-mu)^T (A-mu)`.
pub fn estimate_variance_scale(samples: &[DMatrix<f64>], alpha: f64) -> Result<f64> {
    let (p, q) = common_shape(samples)?;
    if samples.len() < 4 {
        return Err(invalid("variance estimation needs at least 4 samples"));
    }
    if !(0.0..0.5).contains(&alpha) {
        return Err(invalid(format!("alpha = {alpha} must lie in [0, 1/2)")));
    }
    let mut scratch = Vec::new();
    let mut var = DMatrix::zeros(p, q);
    let mut column = vec![0.0; samples.len()];
    for r in 0..p {
        for c in 0..q {
            for (v, a) in column.iter_mut().zip(samples) {
                *v = a[(r, c)];
            }
            let center = trimmed_mean_unchecked(&column, alpha, &mut scratch);
            for v in column.iter_mut() {
                *v = (*v - center).powi(2);
            }
            var[(r, c)] = trimmed_mean_unchecked(&column, alpha, &mut scratch);
        }
    }
    let rows = (0..p).map(|r| var.row(r).sum()).fold(0.0, f64::max);
    let cols = (0..q).map(|c| var.column(c).sum()).fold(0.0, f64::max);
    let v = rows.max(cols);
    if v > 0.0 {
        Ok(v)
    } else {
        Ok(f64::MIN_POSITIVE)
    }
}

fn common_shape(samples: &[DMatrix<f64>]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or_else(|| invalid("empty matrix sample"))?;
    let shape = first.shape();
    for a in samples {
        if a.shape() != shape {
            return Err(Error::DimensionMismatch { expected: shape.0 * shape.1, got: a.len() });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in matrix sample".into()));
        }
    }
    Ok(shape)
}

fn dilation(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = a.shape();
    let mut s = DMatrix::zeros(p + q, p + q);
    s.view_mut((0, p), (p, q)).copy_from(a);
    s.view_mut((p, 0), (q, p)).copy_from(&a.transpose());
    s
}

/// Block mean with a spectral truncation function:
/// `chi / m * sum_i f(dilation(A_i) / chi)`, top-right `p x q` block.
pub fn minsker_block_mean_with(block: &[DMatrix<f64>], chi: f64, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (p, q) = common_shape(block)?;
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(invalid(format!("scale chi must be positive (got {chi})")));
    }
    let mut acc = DMatrix::zeros(p + q, p + q);
    for a in block {
        let eig = SymmetricEigen::try_new(dilation(a) / chi, 1e-14, 10_000)
            .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
        let mapped = eig.eigenvalues.map(&f);
        acc += &eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose();
    }
    acc *= chi / block.len() as f64;
    Ok(acc.view((0, p), (p, q)).into_owned())
}

/// Minsker block mean with the odd truncation [`psi`].
pub fn minsker_block_mean(block: &[DMatrix<f64>], chi: f64) -> Result<DMatrix<f64>> {
    minsker_block_mean_with(block, chi, psi)
}

/// Largest singular value by power iteration on `M^T M` from a seeded start.
pub fn operator_norm(m: &DMatrix<f64>, seed: u64) -> f64 {
    const TOL: f64 = 1e-10;
    const MAX_ITERS: usize = 1000;
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(m.ncols(), |_, _| rng.random_range(0.5..1.5));
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..MAX_ITERS {
        let mv = m * &v;
        let next_sigma = mv.norm();
        let w = m.transpose() * mv;
        let wn = w.norm();
        if wn == 0.0 {
            return next_sigma;
        }
        v = w / wn;
        if (next_sigma - sigma).abs() <= TOL * next_sigma {
            return next_sigma;
        }
        sigma = next_sigma;
    }
    sigma
}

/// CM-MOM with an arbitrary spectral truncation (identity is useful in tests).
pub fn cm_mom_with(
    samples: &[DMatrix<f64>],
    k: usize,
    chi: f64,
    seed: u64,
    f: impl Fn(f64) -> f64 + Copy,
) -> Result<DMatrix<f64>> {
    common_shape(samples)?;
    let blocks = make_blocks(samples.len(), k, seed)?;
    let means = blocks
        .iter()
        .map(|b| {
            let block: Vec<DMatrix<f64>> = b.iter().map(|&i| samples[i].clone()).collect();
            minsker_block_mean_with(&block, chi, f)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut distances = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d = operator_norm(&(&means[i] - &means[j]), seed ^ 0x9e37_79b9);
            distances[i][j] = d;
            distances[j][i] = d;
        }
    }
    let chosen = geometric_selection(&distances);
    Ok(means[chosen].clone())
}

/// CM-MOM estimate of the mean of `samples` using `k` blocks and scale `chi`.
pub fn cm_mom(samples: &[DMatrix<f64>], k: usize, chi: f64, seed: u64) -> Result<DMatrix<f64>> {
    cm_mom_with(samples, k, chi, seed, psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SVD;

    #[test]
    fn psi_is_odd_and_near_identity_at_zero() {
        assert_eq!(psi(0.0), 0.0);
        assert_eq!(psi(-1.3), -psi(1.3));
        assert!((psi(1e-6) - 1e-6).abs() < 1e-17);
    }

    #[test]
    fn scale_formula() {
        let v = 2.0 * 16f64.ln();
        assert!((cm_mom_scale(1, v, 1, 1).unwrap() - 1.0).abs() < 1e-15);
        let chi = cm_mom_scale(100, 1.0, 4, 4).unwrap();
        assert!((chi - (200.0 * 64f64.ln()).sqrt()).abs() < 1e-12);
        assert!((chi - 28.840538).abs() < 1e-6);
        let ratio = cm_mom_scale(200, 1.0, 4, 4).unwrap() / chi;
        assert!((ratio - 2f64.sqrt()).abs() < 1e-14);
        assert!(cm_mom_scale(10, 0.0, 2, 2).is_err());
        assert!(cm_mom_scale(0, 1.0, 2, 2).is_err());
    }

    #[test]
    fn recommended_block_count() {
        assert_eq!(recommended_blocks(0.5).unwrap(), (18.0 * 2f64.ln()).ceil() as usize);
        assert!(recommended_blocks(1.0).is_err());
    }

    #[test]
    fn zero_block_mean_is_zero() {
        let block = vec![DMatrix::zeros(3, 2); 4];
        assert_eq!(minsker_block_mean(&block, 2.0).unwrap(), DMatrix::zeros(3, 2));
        assert_eq!(cm_mom(&vec![DMatrix::zeros(2, 2); 12], 3, 1.0, 0).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn scalar_dilation_hand_value() {
        let out = minsker_block_mean(&[DMatrix::from_element(1, 1, 1.0)], 1.0).unwrap();
        assert!((out[(0, 0)] - 2.5f64.ln()).abs() < 1e-12);
        assert!((out[(0, 0)] - 0.916291).abs() < 1e-6);
    }

    #[test]
    fn large_scale_recovers_the_plain_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block: Vec<DMatrix<f64>> =
            (0..20).map(|_| DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0))).collect();
        let mean = block.iter().fold(DMatrix::zeros(3, 2), |acc, a| acc + a) / 20.0;
        let out = minsker_block_mean(&block, 1e4).unwrap();
        assert!((&out - &mean).norm() <= 1e-3 * mean.norm());
    }

    #[test]
    fn dilation_route_matches_svd_route() {
        // Independent route: the top-right block of f(dilation(A)) equals
        // U f(Sigma) V^T for odd f.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let a = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-3.0..3.0));
            let chi = rng.random_range(0.5..4.0);
            let got = minsker_block_mean(std::slice::from_ref(&a), chi).unwrap();
            let svd = SVD::new(a.clone() / chi, true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mapped = svd.singular_values.map(psi);
            let expect = u * DMatrix::from_diagonal(&mapped) * vt * chi;
            assert!((&got - &expect).norm() < 1e-10, "{got} vs {expect}");
        }
    }

    #[test]
    fn rank_one_samples_have_closed_form() {
        // A = a b^T has the single singular value |a||b|, so the block mean of
        // one sample is A * chi * psi(|a||b| / chi) / (|a||b|).
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let a = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let b = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let m = &a * b.transpose();
            let chi = rng.random_range(0.5..3.0);
            let sigma = a.norm() * b.norm();
            let expect = &m * (chi * psi(sigma / chi) / sigma);
            let got = minsker_block_mean(std::slice::from_ref(&m), chi).unwrap();
            assert!((&got - &expect).norm() < 1e-10 * (1.0 + expect.norm()));
        }
    }

    #[test]
    fn operator_norm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let m = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0));
            let exact = m.clone().svd(false, false).singular_values.max();
            assert!((operator_norm(&m, 3) - exact).abs() < 1e-8 * exact);
        }
        assert_eq!(operator_norm(&DMatrix::zeros(2, 2), 0), 0.0);
    }

    #[test]
    fn single_block_is_block_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<DMatrix<f64>> =
            (0..10).map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0))).collect();
        let chi = 1.7;
        let got = cm_mom(&samples, 1, chi, 5).unwrap();
        let order = &make_blocks(10, 1, 5).unwrap()[0];
        let block: Vec<DMatrix<f64>> = order.iter().map(|&i| samples[i].clone()).collect();
        assert_eq!(got, minsker_block_mean(&block, chi).unwrap());
    }

    #[test]
    fn one_corrupted_block_is_ignored() {
        let seed = 31;
        let clean = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.25, 2.0]);
        let blocks = make_blocks(20, 5, seed).unwrap();
        let mut samples = vec![clean.clone(); 20];
        for &i in &blocks[3] {
            samples[i] = DMatrix::from_element(2, 2, 1e8);
        }
        let chi = 10.0;
        let got = cm_mom(&samples, 5, chi, seed).unwrap();
        let expect = minsker_block_mean(&vec![clean; 4], chi).unwrap();
        assert!((&got - &expect).norm() < 1e-12);
    }

    #[test]
    fn identity_truncation_on_scalars_is_geometric_mom() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = 30;
            let k = rng.random_range(1..8);
            let seed = rng.random::<u64>();
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let samples: Vec<DMatrix<f64>> = values.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect();
            let got = cm_mom_with(&samples, k, 1.0, seed, |x| x).unwrap()[(0, 0)];

            // Scalar geometric MOM: block mean whose ceil(k/2)-th smallest
            // absolute distance (self included) is minimal, lowest index first.
            let blocks = make_blocks(n, k, seed).unwrap();
            let means: Vec<f64> =
                blocks.iter().map(|b| b.iter().map(|&i| values[i]).sum::<f64>() / b.len() as f64).collect();
            let mut best = (f64::INFINITY, 0);
            for (i, mi) in means.iter().enumerate() {
                let mut d: Vec<f64> = means.iter().map(|mj| (mi - mj).abs()).collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if d[k.div_ceil(2) - 1] < best.0 {
                    best = (d[k.div_ceil(2) - 1], i);
                }
            }
            assert!((got - means[best.1]).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_scale_estimate_is_sane() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let samples: Vec<DMatrix<f64>> =
            (0..2000).map(|_| DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
        // Uniform(-1, 1) entries: variance 1/3, row sums over 3 columns = 1.
        let v = estimate_variance_scale(&samples, 0.05).unwrap();
        assert!(v > 0.7 && v < 1.3, "v = {v}");
    }
}
