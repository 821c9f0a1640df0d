//! Monte Carlo reductions and small statistical helpers.
//!
//! All reductions sum fixed-size chunks (in parallel) and then combine the
//! chunk partials in index order, so results never depend on the number of
//! worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const CHUNK: usize = 4096;

/// Order-stable sum: fixed chunk boundaries, partials combined left to right.
pub fn stable_sum(xs: &[f64]) -> f64 {
    let partials: Vec<f64> = xs.par_chunks(CHUNK).map(|c| c.iter().sum::<f64>()).collect();
    partials.iter().sum()
}

pub fn stable_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    stable_sum(xs) / xs.len() as f64
}

/// Sample mean with its Monte Carlo standard error.
///
/// For a plain sample mean the delete-one jackknife standard error coincides
/// with `s / sqrt(n)`, which is what is computed here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub const ZERO: Estimate = Estimate { mean: 0.0, std_err: 0.0 };

    pub fn exact(value: f64) -> Self {
        Estimate { mean: value, std_err: 0.0 }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate::ZERO;
        }
        let first = xs[0];
        if xs.iter().all(|&x| x == first) {
            return Estimate::exact(first);
        }
        let mean = stable_mean(xs);
        if n == 1 {
            return Estimate { mean, std_err: f64::INFINITY };
        }
        let sq: Vec<f64> = xs.par_iter().map(|&x| (x - mean) * (x - mean)).collect();
        let var = stable_sum(&sq) / (n - 1) as f64;
        Estimate { mean, std_err: (var / n as f64).sqrt() }
    }

    pub fn scale(self, c: f64) -> Self {
        Estimate { mean: self.mean * c, std_err: self.std_err * c.abs() }
    }

    /// Sum of two estimates treated as independent.
    pub fn add(self, other: Estimate) -> Self {
        Estimate {
            mean: self.mean + other.mean,
            std_err: self.std_err.hypot(other.std_err),
        }
    }

    /// `|self - target| <= k * std_err` (exact match required when the error is zero).
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_err
    }
}

/// Sample variance (unbiased) of a slice.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = stable_mean(xs);
    let sq: Vec<f64> = xs.par_iter().map(|&x| (x - m) * (x - m)).collect();
    stable_sum(&sq) / (n - 1) as f64
}

/// Sample covariance (unbiased) of two equally long slices.
pub fn sample_covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mx = stable_mean(xs);
    let my = stable_mean(ys);
    let prod: Vec<f64> = xs.par_iter().zip(ys.par_iter()).map(|(&x, &y)| (x - mx) * (y - my)).collect();
    stable_sum(&prod) / (n - 1) as f64
}

pub fn sample_correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let vx = sample_variance(xs);
    let vy = sample_variance(ys);
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    sample_covariance(xs, ys) / (vx * vy).sqrt()
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic 1% critical value of the two-sample KS statistic.
pub fn ks_critical_1pct(na: usize, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    1.628 * ((na + nb) / (na * nb)).sqrt()
}

/// Least-squares slope of `ln y` against `ln x`. Points with non-positive
/// coordinates are skipped; `None` if fewer than two remain.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[inline]
pub fn pow_abs(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else {
        x.abs().powf(p)
    }
}

/// `(s)^(p/2)` for a nonnegative squared quantity.
#[inline]
pub fn pow_half(sq: f64, p: f64) -> f64 {
    if p == 2.0 {
        sq
    } else {
        sq.max(0.0).powf(p / 2.0)
    }
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
