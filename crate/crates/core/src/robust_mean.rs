//! Median-of-means for scalars and the robust-distance selector for vectors.
//!
//! Samples are split into `k` contiguous groups of `m = floor(n / k)`; the
//! trailing `n - k*m` samples are discarded. Callers shuffle beforehand if the
//! input order is not already i.i.d.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::{self, ceil_tol};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateKind {
    Scalar,
    Vector,
}

impl EstimateKind {
    pub fn for_dim(dim: usize) -> Self {
        if dim == 1 {
            EstimateKind::Scalar
        } else {
            EstimateKind::Vector
        }
    }

    /// Multiplier on `ln(1/δ)` giving the number of groups.
    fn group_factor(self) -> f64 {
        match self {
            EstimateKind::Scalar => 8.0,
            EstimateKind::Vector => 18.0,
        }
    }

    /// Constant `c` in the deviation bound `‖μ̄ − μ‖² ≤ c σ² ln(1/δ) / n`.
    pub fn deviation_constant(self) -> f64 {
        match self {
            EstimateKind::Scalar => 32.0,
            EstimateKind::Vector => 486.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustEstimate {
    pub value: Vec<f64>,
    pub groups: usize,
    pub group_size: usize,
    pub delta: f64,
}

/// Group size `m` and group count `k` for `n` samples at confidence `δ`.
///
/// `k = ceil(8 ln(1/δ))` for scalars and `ceil(18 ln(1/δ))` for vectors,
/// clamped to `n`. Scalar `k` is forced odd so the median is a single group
/// mean.
pub fn group_counts(n: usize, delta: f64, kind: EstimateKind) -> Result<(usize, usize)> {
    if n < 1 {
        return Err(Error::param("need at least one sample"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
    }
    let raw = ceil_tol(kind.group_factor() * (1.0 / delta).ln()).max(1.0);
    let mut k = (raw as usize).min(n);
    if kind == EstimateKind::Scalar && k.is_multiple_of(2) {
        k = if k < n { k + 1 } else { k - 1 };
    }
    Ok((n / k, k))
}

fn check_finite(samples: &[f64]) -> Result<()> {
    match samples.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFiniteSample(i)),
        None => Ok(()),
    }
}

fn check_groups(n: usize, k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyData("no samples".into()));
    }
    if k < 1 || k > n {
        return Err(Error::param(format!("group count {k} outside [1, {n}]")));
    }
    Ok(())
}

/// Group means of `samples` viewed as `n` rows of length `dim`.
fn group_means(samples: &[f64], dim: usize, k: usize) -> Vec<Vec<f64>> {
    let n = samples.len() / dim;
    let m = n / k;
    samples
        .chunks_exact(dim * m)
        .take(k)
        .map(|group| {
            let mut acc = vec![0.0; dim];
            for row in group.chunks_exact(dim) {
                linalg::axpy(1.0, row, &mut acc);
            }
            linalg::scale(&mut acc, 1.0 / m as f64);
            acc
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of `k` group means. Even `k` averages the two central means.
pub fn mom_scalar(samples: &[f64], k: usize) -> Result<f64> {
    check_groups(samples.len(), k)?;
    check_finite(samples)?;
    let mut means: Vec<f64> = group_means(samples, 1, k).into_iter().map(|v| v[0]).collect();
    Ok(median(&mut means))
}

/// Robust-distance estimate over `n = samples.len() / dim` vectors.
///
/// For each group mean, the radius is the `ceil(k/2)`-th smallest distance to
/// all group means (itself included at distance 0). Returns the group mean
/// with the smallest radius, lowest index on ties.
pub fn rme_vector(samples: &[f64], dim: usize, k: usize) -> Result<Vec<f64>> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: samples.len() % dim.max(1),
        });
    }
    check_groups(samples.len() / dim, k)?;
    check_finite(samples)?;
    let means = group_means(samples, dim, k);
    Ok(select_central(means))
}

/// Same as [`rme_vector`] for a list of equally sized vectors.
pub fn rme_rows(samples: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let dim = samples.first().map(Vec::len).unwrap_or(0);
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let flat: Vec<f64> = samples.iter().flatten().copied().collect();
    rme_vector(&flat, dim, k)
}

fn select_central(mut means: Vec<Vec<f64>>) -> Vec<f64> {
    let k = means.len();
    if k == 1 {
        return means.pop().unwrap();
    }
    let rank = k.div_ceil(2);
    let mut dists = vec![0.0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = linalg::dist(&means[i], &means[j]);
            dists[i * k + j] = d;
            dists[j * k + i] = d;
        }
    }
    let mut best = 0;
    let mut best_r = f64::INFINITY;
    let mut row = vec![0.0; k];
    for i in 0..k {
        row.copy_from_slice(&dists[i * k..(i + 1) * k]);
        let (_, r, _) = row.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
        if *r < best_r {
            best_r = *r;
            best = i;
        }
    }
    means.swap_remove(best)
}

/// Algorithm dispatch: median-of-means for `dim == 1`, robust distance otherwise,
/// with group counts from [`group_counts`].
pub fn robust_mean(samples: &[f64], dim: usize, delta: f64) -> Result<RobustEstimate> {
    let kind = EstimateKind::for_dim(dim);
    robust_mean_with(samples, dim, delta, kind)
}

/// As [`robust_mean`] with the group-count rule chosen explicitly.
pub fn robust_mean_with(
    samples: &[f64],
    dim: usize,
    delta: f64,
    kind: EstimateKind,
) -> Result<RobustEstimate> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: samples.len(),
        });
    }
    let n = samples.len() / dim;
    let (m, k) = group_counts(n, delta, kind)?;
    let value = if dim == 1 {
        vec![mom_scalar(samples, k)?]
    } else {
        rme_vector(samples, dim, k)?
    };
    Ok(RobustEstimate {
        value,
        groups: k,
        group_size: m,
        delta,
    })
}
