//! Least-squares regression on standardized polynomial features.
//!
//! Used for the conditional expectations of the backward pass and for the
//! decoupling-field surrogates. Normal equations are assembled over fixed row
//! chunks and combined in order, so fits are independent of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHUNK: usize = 4096;
const PIVOT_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionConfig {
    /// Total polynomial degree.
    pub degree: usize,
    /// Add the Brownian level `W_u` to the state features.
    pub brownian_features: bool,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig { degree: 2, brownian_features: false }
    }
}

/// Exponent vectors of all monomials of total degree `<= degree` in `k`
/// variables, constant first, then by degree.
fn monomials(k: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; k]];
    let mut last: Vec<Vec<u32>> = vec![vec![0u32; k]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &last {
            // extend only at or after the last nonzero position to avoid duplicates
            let start = e.iter().rposition(|&v| v > 0).unwrap_or(0);
            for i in start..k {
                let mut f = e.clone();
                f[i] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        last = next;
    }
    out
}

/// Fitted polynomial `x -> sum_l beta_l prod_i ((x_i - c_i)/s_i)^{e_li}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel {
    pub n_features: usize,
    /// Indices of the non-degenerate features.
    pub kept: Vec<usize>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
}

impl PolynomialModel {
    pub fn constant(n_features: usize, value: f64) -> Self {
        PolynomialModel {
            n_features,
            kept: Vec::new(),
            center: Vec::new(),
            scale: Vec::new(),
            exponents: vec![Vec::new()],
            coefficients: vec![value],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = self
            .kept
            .iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(&i, (c, s))| (x[i] - c) / s)
            .collect();
        self.exponents
            .iter()
            .zip(&self.coefficients)
            .map(|(e, b)| b * e.iter().zip(&z).map(|(&k, zi)| zi.powi(k as i32)).product::<f64>())
            .sum()
    }
}

/// A factorized least-squares design: fit once per time step, project many
/// targets.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    rows: usize,
    n_features: usize,
    kept: Vec<usize>,
    center: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u32>>,
    /// Basis values, `rows x q`.
    basis: Vec<f64>,
    /// Lower Cholesky factor of the normalized Gram matrix.
    chol: Vec<f64>,
}

fn basis_row(z: &[f64], exponents: &[Vec<u32>], out: &mut [f64]) {
    for (o, e) in out.iter_mut().zip(exponents) {
        *o = e.iter().zip(z).map(|(&k, zi)| zi.powi(k as i32)).product();
    }
}

impl LeastSquares {
    /// `features` is `rows x n_features` row-major.
    pub fn fit(features: &[f64], n_features: usize, degree: usize) -> Result<Self> {
        if n_features == 0 || features.len() % n_features != 0 {
            return Err(Error::Dimension(format!(
                "{} feature values do not split into rows of {n_features}",
                features.len()
            )));
        }
        let rows = features.len() / n_features;
        if rows == 0 {
            return Err(Error::Dimension("regression needs at least one row".into()));
        }
        let mut kept = Vec::new();
        let mut center = Vec::new();
        let mut scale = Vec::new();
        for i in 0..n_features {
            let col: Vec<f64> = features.par_chunks(n_features).map(|r| r[i]).collect();
            let mean = crate::stats::stable_mean(&col);
            let sq: Vec<f64> = col.par_iter().map(|x| (x - mean) * (x - mean)).collect();
            let sd = (crate::stats::stable_sum(&sq) / rows as f64).sqrt();
            if sd > 1e-12 * mean.abs().max(1.0) {
                kept.push(i);
                center.push(mean);
                scale.push(sd);
            }
        }
        let exponents = monomials(kept.len(), degree);
        let q = exponents.len();
        let mut basis = vec![0.0; rows * q];
        basis.par_chunks_mut(q).zip(features.par_chunks(n_features)).for_each(|(out, row)| {
            let z: Vec<f64> =
                kept.iter().zip(center.iter().zip(&scale)).map(|(&i, (c, s))| (row[i] - c) / s).collect();
            basis_row(&z, &exponents, out);
        });

        let partials: Vec<Vec<f64>> = basis
            .par_chunks(CHUNK * q)
            .map(|chunk| {
                let mut g = vec![0.0; q * q];
                for r in chunk.chunks(q) {
                    for a in 0..q {
                        for b in 0..=a {
                            g[a * q + b] += r[a] * r[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = vec![0.0; q * q];
        for g in &partials {
            for (t, v) in gram.iter_mut().zip(g) {
                *t += v;
            }
        }
        for v in gram.iter_mut() {
            *v /= rows as f64;
        }
        let chol = cholesky(&gram, q)?;
        Ok(LeastSquares { rows, n_features, kept, center, scale, exponents, basis, chol })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_basis(&self) -> usize {
        self.exponents.len()
    }

    /// Regression coefficients for `target` (one value per row).
    pub fn coefficients(&self, target: &[f64]) -> Vec<f64> {
        let q = self.n_basis();
        let partials: Vec<Vec<f64>> = self
            .basis
            .par_chunks(CHUNK * q)
            .zip(target.par_chunks(CHUNK))
            .map(|(b, t)| {
                let mut acc = vec![0.0; q];
                for (r, y) in b.chunks(q).zip(t) {
                    for (a, v) in acc.iter_mut().zip(r) {
                        *a += v * y;
                    }
                }
                acc
            })
            .collect();
        let mut rhs = vec![0.0; q];
        for p in &partials {
            for (t, v) in rhs.iter_mut().zip(p) {
                *t += v;
            }
        }
        for v in rhs.iter_mut() {
            *v /= self.rows as f64;
        }
        cholesky_solve(&self.chol, q, &rhs)
    }

    /// Fitted values at the design rows. A constant target is reproduced exactly.
    pub fn project_into(&self, target: &[f64], out: &mut [f64]) {
        if let Some(c) = constant_value(target) {
            out.fill(c);
            return;
        }
        let beta = self.coefficients(target);
        let q = self.n_basis();
        out.par_iter_mut().zip(self.basis.par_chunks(q)).for_each(|(o, r)| {
            *o = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
        });
    }

    pub fn project(&self, target: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; target.len()];
        self.project_into(target, &mut out);
        out
    }

    /// Portable model for evaluation at new points.
    pub fn model(&self, target: &[f64]) -> PolynomialModel {
        if let Some(c) = constant_value(target) {
            return PolynomialModel::constant(self.n_features, c);
        }
        PolynomialModel {
            n_features: self.n_features,
            kept: self.kept.clone(),
            center: self.center.clone(),
            scale: self.scale.clone(),
            exponents: self.exponents.clone(),
            coefficients: self.coefficients(target),
        }
    }
}

fn constant_value(target: &[f64]) -> Option<f64> {
    let first = *target.first()?;
    target.iter().all(|&v| v == first).then_some(first)
}

fn cholesky(a: &[f64], q: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..=i {
            let mut s = a[i * q + j];
            for k in 0..j {
                s -= l[i * q + k] * l[j * q + k];
            }
            if i == j {
                if s <= PIVOT_FLOOR * a[i * q + i].max(1.0) {
                    return Err(Error::IllConditioned(format!(
                        "Gram pivot {s:.3e} at basis function {i} of {q}"
                    )));
                }
                l[i * q + i] = s.sqrt();
            } else {
                l[i * q + j] = s / l[j * q + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], q: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; q];
    for i in 0..q {
        let s: f64 = (0..i).map(|k| l[i * q + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * q + i];
    }
    let mut x = vec![0.0; q];
    for i in (0..q).rev() {
        let s: f64 = (i + 1..q).map(|k| l[k * q + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * q + i];
    }
    x
}
