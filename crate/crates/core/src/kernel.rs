//! Gaussian-kernel machinery shared by the MMD baseline detector and the
//! evaluation metrics: median-heuristic bandwidth and the biased /
//! unbiased squared-MMD estimators.

use crate::error::{Error, Result};

pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(-||x-y||² / (2σ²))`.
pub fn gaussian(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    (-sq_dist(x, y) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Median of pairwise Euclidean distances over the pooled sample. Falls
/// back to 1.0 when the median is zero (identical points); every kernel
/// value is 1 in that case regardless of bandwidth, so the MMD is 0
/// either way.
pub fn median_bandwidth(pooled: &[&[f64]]) -> f64 {
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Biased (V-statistic) squared MMD: all pairs including self-pairs.
pub fn mmd2_biased(a: &[&[f64]], b: &[&[f64]], bandwidth: f64) -> f64 {
    let (m, n) = (a.len() as f64, b.len() as f64);
    let mut kaa = 0.0;
    for x in a {
        for y in a {
            kaa += gaussian(x, y, bandwidth);
        }
    }
    let mut kbb = 0.0;
    for x in b {
        for y in b {
            kbb += gaussian(x, y, bandwidth);
        }
    }
    let mut kab = 0.0;
    for x in a {
        for y in b {
            kab += gaussian(x, y, bandwidth);
        }
    }
    kaa / (m * m) + kbb / (n * n) - 2.0 * kab / (m * n)
}

/// Unbiased (U-statistic) squared MMD: self-pairs excluded; the estimate
/// may be slightly negative and is reported as-is.
pub fn mmd2_unbiased(a: &[&[f64]], b: &[&[f64]], bandwidth: f64) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Estimator(format!(
            "unbiased MMD needs at least 2 samples per batch, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (m, n) = (a.len() as f64, b.len() as f64);
    let mut kaa = 0.0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in a.iter().enumerate() {
            if i != j {
                kaa += gaussian(x, y, bandwidth);
            }
        }
    }
    let mut kbb = 0.0;
    for (i, x) in b.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if i != j {
                kbb += gaussian(x, y, bandwidth);
            }
        }
    }
    let mut kab = 0.0;
    for x in a {
        for y in b {
            kab += gaussian(x, y, bandwidth);
        }
    }
    Ok(kaa / (m * (m - 1.0)) + kbb / (n * (n - 1.0)) - 2.0 * kab / (m * n))
}
