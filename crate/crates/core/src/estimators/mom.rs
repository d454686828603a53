//! Median-of-means estimators: coordinatewise and groupwise (geometric selection).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::estimators::select::select_in_place;
use crate::model::GradientSamples;
use crate::Param;

/// Seeded shuffle of `0..n` cut into `k` contiguous blocks of size
/// `floor(n / k)`; the `n mod k` surplus samples are dropped.
pub fn make_blocks(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 1 {
        return Err(invalid("number of blocks must be at least 1"));
    }
    if k > n {
        return Err(invalid(format!("{k} blocks requested for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let m = n / k;
    Ok(order[..k * m].chunks(m).map(<[usize]>::to_vec).collect())
}

/// Index (0-based) of the lower median among `k` sorted values.
pub(crate) fn lower_median_rank(k: usize) -> usize {
    (k - 1) / 2
}

/// Per-coordinate median of the `k` block means (lower median for even `k`).
pub fn coordinatewise_mom(samples: &GradientSamples, k: usize, seed: u64) -> Result<Param> {
    samples.check_finite()?;
    let blocks = make_blocks(samples.n(), k, seed)?;
    let m = blocks[0].len() as f64;
    let mut means = vec![0.0; k];
    let values: Vec<f64> = (0..samples.dim())
        .map(|j| {
            let col = samples.coordinate(j);
            for (mean, block) in means.iter_mut().zip(&blocks) {
                *mean = block.iter().map(|&i| col[i]).sum::<f64>() / m;
            }
            select_in_place(&mut means, lower_median_rank(k))
        })
        .collect();
    Ok(samples.reshape(values))
}

/// Index of the point whose `ceil(k/2)`-th smallest distance to all points
/// (itself included) is minimal; ties go to the lowest index.
pub fn geometric_selection(distances: &[Vec<f64>]) -> usize {
    let k = distances.len();
    let rank = k.div_ceil(2) - 1;
    let mut best = (f64::INFINITY, 0);
    let mut row = Vec::with_capacity(k);
    for (i, d) in distances.iter().enumerate() {
        row.clear();
        row.extend_from_slice(d);
        let score = select_in_place(&mut row, rank);
        if score < best.0 {
            best = (score, i);
        }
    }
    best.1
}

/// Checks that `groups` partitions `0..dim`.
pub fn validate_partition(groups: &[Vec<usize>], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    for g in groups {
        if g.is_empty() {
            return Err(invalid("empty group in partition"));
        }
        for &j in g {
            if j >= dim || seen[j] {
                return Err(invalid(format!("coordinate {j} is out of range or covered twice")));
            }
            seen[j] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(invalid("groups do not cover every coordinate"));
    }
    Ok(())
}

/// Groupwise median of means: within each group, the block mean with the
/// smallest `ceil(k/2)`-th Euclidean distance to the other block means.
///
/// `groups` holds indices into the flattened (column-major) gradient.
pub fn group_geometric_mom(samples: &GradientSamples, groups: &[Vec<usize>], k: usize, seed: u64) -> Result<Param> {
    validate_partition(groups, samples.dim())?;
    samples.check_finite()?;
    let blocks = make_blocks(samples.n(), k, seed)?;
    let m = blocks[0].len() as f64;
    let mut out = vec![0.0; samples.dim()];
    for group in groups {
        // means[b][c]: block b, c-th coordinate of the group.
        let means: Vec<Vec<f64>> = blocks
            .iter()
            .map(|block| {
                group
                    .iter()
                    .map(|&j| {
                        let col = samples.coordinate(j);
                        block.iter().map(|&i| col[i]).sum::<f64>() / m
                    })
                    .collect()
            })
            .collect();
        let distances: Vec<Vec<f64>> = means
            .iter()
            .map(|a| {
                means
                    .iter()
                    .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
                    .collect()
            })
            .collect();
        let chosen = geometric_selection(&distances);
        for (&j, &v) in group.iter().zip(&means[chosen]) {
            out[j] = v;
        }
    }
    Ok(samples.reshape(out))
}
