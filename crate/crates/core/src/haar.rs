//! Haar analysis and synthesis of Brownian increments on dyadic grids.
//!
//! Haar functions on `[t_start, t_end]` (length `L`) are enumerated as
//! `h_0 = 1/sqrt(L)` followed by level `j = 0, 1, ...`, position
//! `m = 0..2^j`, at index `2^j + m`: `+2^{j/2}/sqrt(L)` on the left half of
//! the `m`-th dyadic block and `-2^{j/2}/sqrt(L)` on the right half. On a grid
//! with `2^K` cells the first `2^K` functions form an orthonormal basis of the
//! cell-wise constant functions, so the coefficients `int h_l dW` are i.i.d.
//! standard Gaussians and synthesis inverts analysis exactly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::paths::Increments;

#[derive(Debug, Clone, PartialEq)]
pub struct HaarCoefficients {
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    level: usize,
    /// Index `(path * dim + coordinate) * level + l`.
    data: Vec<f64>,
}

impl HaarCoefficients {
    pub fn from_vec(grid: TimeGrid, dim: usize, n_paths: usize, level: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_paths * dim * level {
            return Err(Error::Dimension(format!(
                "expected {} Haar coefficients, got {}",
                n_paths * dim * level,
                data.len()
            )));
        }
        Ok(HaarCoefficients { grid, dim, n_paths, level, data })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn coefficient(&self, path: usize, coord: usize, l: usize) -> f64 {
        self.data[(path * self.dim + coord) * self.level + l]
    }
}

/// Decompose the index `l >= 1` into `(level j, position m)`.
#[inline]
fn level_position(l: usize) -> (u32, usize) {
    let j = usize::BITS - 1 - l.leading_zeros();
    (j, l - (1usize << j))
}

fn check_dyadic(grid: &TimeGrid) -> Result<()> {
    if !grid.is_dyadic() {
        return Err(Error::UnsupportedGrid(format!(
            "Haar representation needs 2^k cells, grid has {}",
            grid.n_steps()
        )));
    }
    Ok(())
}

/// Coefficients `int h_l dW` for `l < level`, computed cell-wise.
pub fn haar_analyze(paths: &Increments, level: usize) -> Result<HaarCoefficients> {
    let grid = *paths.grid();
    check_dyadic(&grid)?;
    let n = grid.n_steps();
    if level == 0 || level > n {
        return Err(Error::Dimension(format!("Haar level {level} not in 1..={n}")));
    }
    let d = paths.dim();
    let inv_sqrt_len = 1.0 / grid.length().sqrt();
    let mut data = vec![0.0; paths.n_paths() * d * level];
    data.par_chunks_mut(d * level).enumerate().for_each(|(p, out)| {
        let view = paths.path(p);
        let mut prefix = vec![0.0; n + 1];
        for j in 0..d {
            for k in 0..n {
                prefix[k + 1] = prefix[k] + view.increment(k, j);
            }
            let coeffs = &mut out[j * level..(j + 1) * level];
            coeffs[0] = prefix[n] * inv_sqrt_len;
            for (l, c) in coeffs.iter_mut().enumerate().skip(1) {
                let (lev, m) = level_position(l);
                let block = n >> lev;
                let start = m * block;
                let mid = start + block / 2;
                let end = start + block;
                let amp = (2f64).powf(lev as f64 / 2.0) * inv_sqrt_len;
                *c = amp * ((prefix[mid] - prefix[start]) - (prefix[end] - prefix[mid]));
            }
        }
    });
    Ok(HaarCoefficients { grid, dim: d, n_paths: paths.n_paths(), level, data })
}

/// Rebuild increments `dW_k = sum_l c_l int_{cell k} h_l du`.
pub fn haar_synthesize(coeffs: &HaarCoefficients, grid: &TimeGrid) -> Result<Increments> {
    check_dyadic(grid)?;
    let n = grid.n_steps();
    if coeffs.level != n || coeffs.grid.n_steps() != n {
        return Err(Error::Dimension(format!(
            "Haar level {} does not match grid resolution {n}",
            coeffs.level
        )));
    }
    let d = coeffs.dim;
    let step = grid.step();
    let inv_sqrt_len = 1.0 / grid.length().sqrt();
    let levels = n.trailing_zeros();
    let amps: Vec<f64> = (0..levels).map(|j| (2f64).powf(j as f64 / 2.0) * inv_sqrt_len).collect();
    let mut data = vec![0.0; coeffs.n_paths * n * d];
    data.par_chunks_mut(n * d).enumerate().for_each(|(p, out)| {
        for j in 0..d {
            let c = &coeffs.data[(p * d + j) * n..(p * d + j + 1) * n];
            for k in 0..n {
                let mut acc = c[0] * inv_sqrt_len;
                for (lev, amp) in amps.iter().enumerate() {
                    let block = n >> lev;
                    let m = k / block;
                    let sign = if k % block < block / 2 { 1.0 } else { -1.0 };
                    acc += sign * amp * c[(1 << lev) + m];
                }
                out[k * d + j] = acc * step;
            }
        }
    });
    Increments::from_vec(*grid, d, coeffs.n_paths, data)
}
