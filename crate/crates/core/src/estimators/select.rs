//! Linear-time order statistics.
//!
//! Selection uses the standard library's introselect, whose median-of-medians
//! fallback bounds the worst case at O(n).

/// Returns the `k`-th smallest value (1-based) of `values`.
pub fn select_kth(values: &[f64], k: usize) -> crate::Result<f64> {
    use crate::error::invalid;
    if values.is_empty() {
        return Err(invalid("select_kth on an empty sample"));
    }
    if k < 1 || k > values.len() {
        return Err(invalid(format!("rank {k} out of range 1..={}", values.len())));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(invalid("select_kth input contains NaN"));
    }
    let mut buf = values.to_vec();
    Ok(select_in_place(&mut buf, k - 1))
}

/// Rearranges `v` so that `v[k]` holds the value of rank `k` (0-based), every
/// element before it is `<=` and every element after it is `>=`.
///
/// Panics if `k >= v.len()`. NaN must be filtered by the caller.
pub fn select_in_place(v: &mut [f64], k: usize) -> f64 {
    assert!(k < v.len(), "rank {k} out of range for {} values", v.len());
    *v.select_nth_unstable_by(k, f64::total_cmp).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted_kth(values: &[f64], k: usize) -> f64 {
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s[k - 1]
    }

    #[test]
    fn small_examples() {
        assert_eq!(select_kth(&[3.0, 1.0, 2.0], 2).unwrap(), 2.0);
        assert_eq!(select_kth(&[5.0, 5.0, 5.0], 3).unwrap(), 5.0);
    }

    #[test]
    fn error_paths() {
        assert!(select_kth(&[], 1).is_err());
        assert!(select_kth(&[1.0], 0).is_err());
        assert!(select_kth(&[1.0], 2).is_err());
        assert!(select_kth(&[1.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn matches_full_sort_on_random_arrays() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(1..300);
            // Coarse integer grid so that ties are frequent.
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-20..20) as f64).collect();
            let k = rng.random_range(1..=n);
            assert_eq!(select_kth(&values, k).unwrap(), sorted_kth(&values, k));
        }
    }

    #[test]
    fn in_place_leaves_partitioned_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let x = select_in_place(&mut v, 123);
        assert!(v[..123].iter().all(|a| *a <= x));
        assert!(v[124..].iter().all(|a| *a >= x));
        // Second selection restricted to the right part.
        let y = select_in_place(&mut v[123..], 200 - 123);
        assert_eq!(y, sorted_kth(&v, 201));
    }

    #[test]
    fn signed_zeros_compare_equal_in_value() {
        assert_eq!(select_kth(&[0.0, -0.0, 1.0], 2).unwrap(), 0.0);
    }

    #[test]
    fn runtime_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut time = |n: usize| {
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            (0..5)
                .map(|_| {
                    let start = std::time::Instant::now();
                    std::hint::black_box(select_kth(&v, n / 3).unwrap());
                    start.elapsed().as_secs_f64()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let (small, large) = (time(100_000), time(400_000));
        assert!(large / small < 6.0, "time ratio {}", large / small);
    }
}
