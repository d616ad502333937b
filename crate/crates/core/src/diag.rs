//! Sample diagnostics: moments, histograms, one-dimensional kernel density
//! estimates and the RBF maximum mean discrepancy.
//!
//! Every statistic first puts its input into a canonical (lexicographic)
//! order, so results are bit-identical under any permutation of the
//! particles.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{MpmError, Result};

pub const DEFAULT_HISTOGRAM_BINS: usize = 32;
pub const DEFAULT_KDE_POINTS: usize = 256;
/// Padding of the default KDE grid beyond the sample range, in bandwidths.
pub const KDE_PAD_BANDWIDTHS: f64 = 4.0;
/// Largest pooled subsample used for the median-heuristic lengthscale.
pub const MEDIAN_SUBSAMPLE: usize = 2000;

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

fn canonical(points: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    out.sort_by(|a, b| lexicographic(a, b));
    out
}

fn sorted_values(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn check_dimension(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map_or(0, Vec::len);
    for p in points {
        if p.len() != d {
            return Err(MpmError::DimensionMismatch { expected: d, got: p.len() });
        }
    }
    Ok(d)
}

/// Sample mean and unbiased (n − 1) covariance.
pub fn moments(points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if points.len() < 2 {
        return Err(MpmError::DegenerateSample(format!(
            "moments need at least 2 points, got {}",
            points.len()
        )));
    }
    let d = check_dimension(points)?;
    let pts = canonical(points);
    let n = pts.len() as f64;
    let mut mean = vec![0.0; d];
    for p in &pts {
        for a in 0..d {
            mean[a] += p[a];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; d]; d];
    for p in &pts {
        for a in 0..d {
            let da = p[a] - mean[a];
            for b in a..d {
                cov[a][b] += da * (p[b] - mean[b]);
            }
        }
    }
    let cov = (0..d)
        .map(|a| (0..d).map(|b| cov[a.min(b)][a.max(b)] / (n - 1.0)).collect())
        .collect();
    Ok((mean, cov))
}

/// Unbiased standard deviation of a scalar sample.
pub fn sample_std(values: &[f64]) -> Result<f64> {
    let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    Ok(moments(&rows)?.1[0][0].sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over [min, max]; the last bin is closed. A sample
/// with zero range gets a unit-width window around its value.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(MpmError::DegenerateSample("histogram of an empty sample".into()));
    }
    if bins == 0 {
        return Err(MpmError::InvalidParameter("histogram needs at least one bin".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MpmError::NonFinite("histogram input".into()));
    }
    let sorted = sorted_values(values);
    let (mut lo, mut hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    for &v in &sorted {
        let mut k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        while k > 0 && v < edges[k] {
            k -= 1;
        }
        while k + 1 < bins && v >= edges[k + 1] {
            k += 1;
        }
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl KdeCurve {
    /// Trapezoid-rule integral over the evaluation grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Silverman's rule 1.06 σ̂ n^(−1/5).
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let std = sample_std(values)?;
    if !(std > 0.0) {
        return Err(MpmError::DegenerateSample(
            "sample has zero variance; pass an explicit KDE bandwidth".into(),
        ));
    }
    Ok(1.06 * std * (values.len() as f64).powf(-0.2))
}

/// Gaussian-kernel density estimate. Without an explicit `grid`, evaluates
/// on 256 points spanning [min − 4b, max + 4b].
pub fn kde_1d(values: &[f64], bandwidth: Option<f64>, grid: Option<&[f64]>) -> Result<KdeCurve> {
    if values.is_empty() {
        return Err(MpmError::DegenerateSample("KDE of an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MpmError::NonFinite("KDE input".into()));
    }
    let b = match bandwidth {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(MpmError::InvalidParameter(format!("KDE bandwidth must be positive, got {b}"))),
        None => {
            if values.len() < 2 {
                return Err(MpmError::DegenerateSample(
                    "automatic KDE bandwidth needs at least 2 samples".into(),
                ));
            }
            silverman_bandwidth(values)?
        }
    };
    let sorted = sorted_values(values);
    let grid: Vec<f64> = match grid {
        Some(g) => g.to_vec(),
        None => {
            let lo = sorted[0] - KDE_PAD_BANDWIDTHS * b;
            let hi = sorted[sorted.len() - 1] + KDE_PAD_BANDWIDTHS * b;
            let step = (hi - lo) / (DEFAULT_KDE_POINTS - 1) as f64;
            (0..DEFAULT_KDE_POINTS).map(|i| lo + step * i as f64).collect()
        }
    };
    let norm = 1.0 / (sorted.len() as f64 * b * (2.0 * PI).sqrt());
    let density = grid
        .iter()
        .map(|&x| {
            sorted
                .iter()
                .map(|&s| {
                    let z = (x - s) / b;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(KdeCurve {
        bandwidth: b,
        grid,
        density,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MmdEstimator {
    #[default]
    Unbiased,
    /// V-statistic including the diagonal terms.
    Biased,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Mmd {
    /// MMD² before flooring; the unbiased estimate may be negative.
    pub mmd2_raw: f64,
    /// sqrt(max(MMD², 0))
    pub mmd: f64,
    pub lengthscale: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise distance over the pooled sample (evenly thinned to at
/// most 2000 points in canonical order). Falls back to 1 when the median is
/// zero.
pub fn median_heuristic(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut pooled: Vec<&[f64]> = a.iter().chain(b).map(Vec::as_slice).collect();
    pooled.sort_by(|x, y| lexicographic(x, y));
    let n = pooled.len();
    let take = n.min(MEDIAN_SUBSAMPLE);
    let sub: Vec<&[f64]> = (0..take).map(|i| pooled[i * n / take]).collect();
    let mut dists = Vec::with_capacity(take * take.saturating_sub(1) / 2);
    for i in 0..sub.len() {
        for j in i + 1..sub.len() {
            dists.push(squared_distance(sub[i], sub[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if *median > 0.0 {
        *median
    } else {
        1.0
    }
}

fn kernel_sum(x: &[&[f64]], y: &[&[f64]], gamma: f64, skip_diagonal: bool) -> f64 {
    let mut total = 0.0;
    for (i, a) in x.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            total += (-gamma * squared_distance(a, b)).exp();
        }
    }
    total
}

/// RBF-kernel MMD between two samples, k(x, y) = exp(−‖x − y‖² / (2ℓ²)),
/// with ℓ from the median heuristic unless given.
pub fn mmd_rbf(a: &[Vec<f64>], b: &[Vec<f64>], lengthscale: Option<f64>, estimator: MmdEstimator) -> Result<Mmd> {
    if a.is_empty() || b.is_empty() {
        return Err(MpmError::DegenerateSample("MMD needs two non-empty samples".into()));
    }
    let da = check_dimension(a)?;
    let db = check_dimension(b)?;
    if da != db {
        return Err(MpmError::DimensionMismatch { expected: da, got: db });
    }
    if estimator == MmdEstimator::Unbiased && (a.len() < 2 || b.len() < 2) {
        return Err(MpmError::DegenerateSample(
            "unbiased MMD needs at least 2 points per sample".into(),
        ));
    }
    let mut x = canonical(a);
    let mut y = canonical(b);
    let order = x
        .len()
        .cmp(&y.len())
        .then_with(|| {
            x.iter()
                .zip(&y)
                .map(|(p, q)| lexicographic(p, q))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
    if order == Ordering::Greater {
        std::mem::swap(&mut x, &mut y);
    }
    let ell = match lengthscale {
        Some(l) if l > 0.0 && l.is_finite() => l,
        Some(l) => return Err(MpmError::InvalidParameter(format!("MMD lengthscale must be positive, got {l}"))),
        None => median_heuristic(a, b),
    };
    let gamma = 1.0 / (2.0 * ell * ell);
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mmd2 = match estimator {
        MmdEstimator::Unbiased => {
            kernel_sum(&x, &x, gamma, true) / (m * (m - 1.0)) + kernel_sum(&y, &y, gamma, true) / (n * (n - 1.0))
                - 2.0 * kernel_sum(&x, &y, gamma, false) / (m * n)
        }
        MmdEstimator::Biased => {
            kernel_sum(&x, &x, gamma, false) / (m * m) + kernel_sum(&y, &y, gamma, false) / (n * n)
                - 2.0 * kernel_sum(&x, &y, gamma, false) / (m * n)
        }
    };
    Ok(Mmd {
        mmd2_raw: mmd2,
        mmd: mmd2.max(0.0).sqrt(),
        lengthscale: ell,
    })
}

/// Summary of one particle cloud.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleStats {
    pub count: usize,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub histograms: Vec<Histogram>,
    pub kdes: Vec<KdeCurve>,
    /// Against a reference sample, when one is given.
    pub mmd: Option<Mmd>,
}

/// Moments, per-axis histograms and KDEs, and optionally the MMD to
/// `reference`.
pub fn sample_stats(points: &[Vec<f64>], reference: Option<&[Vec<f64>]>) -> Result<SampleStats> {
    let (mean, covariance) = moments(points)?;
    let d = mean.len();
    let mut histograms = Vec::with_capacity(d);
    let mut kdes = Vec::with_capacity(d);
    for a in 0..d {
        let axis: Vec<f64> = points.iter().map(|p| p[a]).collect();
        histograms.push(histogram(&axis, DEFAULT_HISTOGRAM_BINS)?);
        kdes.push(kde_1d(&axis, None, None)?);
    }
    let mmd = match reference {
        Some(r) => Some(mmd_rbf(points, r, None, MmdEstimator::Unbiased)?),
        None => None,
    };
    Ok(SampleStats {
        count: points.len(),
        mean,
        covariance,
        histograms,
        kdes,
        mmd,
    })
}
