//! Evaluation metrics: squared MMD with an RBF kernel, and RMSE.
//!
//! The MMD estimator reproduces the mixed form
//!
//! ```text
//! 1/(n(n-1)) sum_{i!=j} k(x_i,x_j) + 1/(n(n-1)) sum_{i!=j} k(y_i,y_j)
//!   - 2/n^2 sum_{i,j} k(x_i,y_j)
//! ```
//!
//! verbatim: the within-sample terms are unbiased while the cross term is
//! biased, so mmd2(X, X) can be negative for non-degenerate X. Scores are
//! only ever compared against each other, so consistency with this exact
//! form matters more than statistical niceties.

use crate::error::{Result, SxlError};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdConfig {
    pub bandwidth: Bandwidth,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

fn squared_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rbf(d2: f64, h: f64) -> f64 {
    (-d2 / (2.0 * h * h)).exp()
}

fn as_vectors<'a>(grids: &'a [Grid]) -> Vec<&'a [f64]> {
    grids.iter().map(|g| g.values()).collect()
}

/// Median of pairwise Euclidean distances over the pooled sample; falls
/// back to 1 when the median is zero.
pub fn median_heuristic_bandwidth(x: &[Grid], y: &[Grid]) -> Result<f64> {
    let pooled: Vec<&[f64]> = as_vectors(x).into_iter().chain(as_vectors(y)).collect();
    if pooled.len() < 2 {
        return Err(SxlError::invalid("median heuristic needs >= 2 samples"));
    }
    if pooled.iter().any(|v| v.len() != pooled[0].len()) {
        return Err(SxlError::invalid("samples must share one shape"));
    }
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(squared_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    Ok(if median == 0.0 { 1.0 } else { median })
}

/// Squared empirical MMD between two equal-sized samples of grids, each
/// flattened to a vector, under an RBF kernel k(u,v) = exp(-|u-v|^2/(2h^2)).
pub fn mmd2(x: &[Grid], y: &[Grid], cfg: &MmdConfig) -> Result<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(SxlError::invalid(format!(
            "mmd2 needs two samples of equal size >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let xv = as_vectors(x);
    let yv = as_vectors(y);
    let dim = xv[0].len();
    if xv.iter().chain(&yv).any(|v| v.len() != dim) {
        return Err(SxlError::invalid("mmd2: tile shapes must all match"));
    }
    let h = match cfg.bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 => h,
        Bandwidth::Fixed(h) => {
            return Err(SxlError::invalid(format!("bandwidth must be positive, got {h}")))
        }
        Bandwidth::MedianHeuristic => median_heuristic_bandwidth(x, y)?,
    };

    let nf = n as f64;
    let mut kxx = 0.0;
    let mut kyy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            kxx += rbf(squared_dist(xv[i], xv[j]), h);
            kyy += rbf(squared_dist(yv[i], yv[j]), h);
        }
    }
    let mut kxy = 0.0;
    for i in 0..n {
        for j in 0..n {
            kxy += rbf(squared_dist(xv[i], yv[j]), h);
        }
    }
    Ok(kxx / (nf * (nf - 1.0)) + kyy / (nf * (nf - 1.0)) - 2.0 * kxy / (nf * nf))
}

/// Root mean squared error between two equally shaped grids.
pub fn rmse(truth: &Grid, pred: &Grid) -> Result<f64> {
    if truth.rows() != pred.rows() || truth.cols() != pred.cols() {
        return Err(SxlError::invalid(format!(
            "rmse: shapes {}x{} vs {}x{}",
            truth.rows(),
            truth.cols(),
            pred.rows(),
            pred.cols()
        )));
    }
    let n = truth.len() as f64;
    let ss: f64 = truth
        .values()
        .iter()
        .zip(pred.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / n).sqrt())
}
