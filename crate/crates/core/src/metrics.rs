//! Distribution distances and coverage metrics for generated samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub swd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2_analytic: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub n_real: usize,
    pub n_gen: usize,
    pub seed: u64,
}

pub const DEFAULT_PROJECTIONS: usize = 256;
pub const DEFAULT_K: usize = 3;

/// Uniform random unit directions in `d` dimensions.
pub fn random_directions(d: usize, n_proj: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, rng::tag::SWD_PROJ, d as u64);
    (0..n_proj)
        .map(|_| loop {
            let v = rng::normal_vec(&mut r, d);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn project_sorted(m: &Matrix, dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = m
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

/// Quantile of sorted values at level `q ∈ (0, 1)`, interpolating linearly
/// between order statistics placed at `(i + 0.5)/n`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * n as f64 - 0.5;
    if pos <= 0.0 {
        return sorted[0];
    }
    let lo = pos.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// 1-D 2-Wasserstein distance between sorted samples.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let sq = if a.len() == b.len() {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
    } else {
        let n = a.len().max(b.len());
        (0..n)
            .map(|i| {
                let q = (i as f64 + 0.5) / n as f64;
                (quantile(a, q) - quantile(b, q)).powi(2)
            })
            .sum::<f64>()
            / n as f64
    };
    sq.sqrt()
}

/// Sliced Wasserstein distance with explicit projection directions.
pub fn sliced_wasserstein_with(a: &Matrix, b: &Matrix, dirs: &[Vec<f64>]) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::invalid("sliced Wasserstein needs non-empty sample sets"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    if dirs.is_empty() {
        return Err(Error::invalid("need at least one projection"));
    }
    let total: f64 = dirs
        .iter()
        .map(|u| wasserstein_1d(&project_sorted(a, u), &project_sorted(b, u)))
        .sum();
    Ok(total / dirs.len() as f64)
}

/// Mean over `n_proj` random directions of the 1-D W2 between projections.
pub fn sliced_wasserstein(a: &Matrix, b: &Matrix, n_proj: usize, seed: u64) -> Result<f64> {
    if n_proj == 0 {
        return Err(Error::invalid("need at least one projection"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    sliced_wasserstein_with(a, b, &random_directions(a.ncols(), n_proj, seed))
}

/// W2 between diagonal Gaussians.
pub fn gaussian_w2(mu1: &[f64], diag1: &[f64], mu2: &[f64], diag2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if diag1.len() != d || mu2.len() != d || diag2.len() != d {
        return Err(Error::invalid("gaussian_w2 arguments must share one dimension"));
    }
    if diag1.iter().chain(diag2).any(|&v| !(v >= 0.0)) {
        return Err(Error::invalid("variances must be non-negative"));
    }
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    let cov_term: f64 = diag1
        .iter()
        .zip(diag2)
        .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
        .sum();
    Ok((mean_term + cov_term).sqrt())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Squared distance from each point to its k-th nearest other point.
fn knn_radii_sq(pts: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut buf = Vec::with_capacity(pts.len());
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            buf.clear();
            buf.extend(
                pts.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| sq_dist(p, q)),
            );
            let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Fraction of `queries` inside the union of closed k-NN balls of `support`.
fn coverage(support: &[Vec<f64>], radii_sq: &[f64], queries: &[Vec<f64>]) -> f64 {
    let hits = queries
        .iter()
        .filter(|q| support.iter().zip(radii_sq).any(|(s, r)| sq_dist(q, s) <= *r))
        .count();
    hits as f64 / queries.len() as f64
}

/// k-NN manifold precision and recall.
///
/// Precision is the share of generated points inside some real point's
/// k-NN ball; recall swaps the roles.
pub fn knn_precision_recall(real: &Matrix, gen: &Matrix, k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k >= real.nrows() || k >= gen.nrows() {
        return Err(Error::invalid(format!(
            "k = {k} needs more than k points in both sets (real {}, gen {})",
            real.nrows(),
            gen.nrows()
        )));
    }
    if real.ncols() != gen.ncols() {
        return Err(Error::invalid("dimension mismatch"));
    }
    let (r, g) = (rows(real), rows(gen));
    let (rr, rg) = (knn_radii_sq(&r, k), knn_radii_sq(&g, k));
    Ok((coverage(&r, &rr, &g), coverage(&g, &rg, &r)))
}

/// Full report for generated samples against a real reference set.
pub fn evaluate(real: &Matrix, gen: &Matrix, n_proj: usize, k: usize, seed: u64) -> Result<MetricReport> {
    let swd = sliced_wasserstein(real, gen, n_proj, seed)?;
    let (precision, recall) = knn_precision_recall(real, gen, k)?;
    Ok(MetricReport {
        swd,
        w2_analytic: None,
        precision,
        recall,
        n_real: real.nrows(),
        n_gen: gen.nrows(),
        seed,
    })
}

/// Per-coordinate sample mean and variance.
pub fn diag_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    let mean: Vec<f64> = m.columns().into_iter().map(|c| c.sum() / n).collect();
    let var = m
        .columns()
        .into_iter()
        .zip(&mean)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0).max(1.0))
        .collect();
    (mean, var)
}
