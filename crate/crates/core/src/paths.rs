//! Brownian increment batches and the coupled motion `W^phi`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{retained_weight, CouplingFunction, TimeGrid};
use crate::rng::{stream_rng, Lane};

/// Gaussian increments for a batch of `d`-dimensional paths, stored path-major:
/// index `(path * n_steps + cell) * dim + coordinate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    data: Vec<f64>,
}

impl Increments {
    pub fn from_vec(grid: TimeGrid, dim: usize, n_paths: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_paths * grid.n_steps() * dim {
            return Err(Error::Dimension(format!(
                "expected {} increments, got {}",
                n_paths * grid.n_steps() * dim,
                data.len()
            )));
        }
        Ok(Increments { grid, dim, n_paths, data })
    }

    pub fn zeros(grid: TimeGrid, dim: usize, n_paths: usize) -> Self {
        Increments { grid, dim, n_paths, data: vec![0.0; n_paths * grid.n_steps() * dim] }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn path_len(&self) -> usize {
        self.grid.n_steps() * self.dim
    }

    pub fn path(&self, p: usize) -> PathView<'_> {
        let len = self.path_len();
        PathView { grid: &self.grid, dim: self.dim, incs: &self.data[p * len..(p + 1) * len] }
    }

    pub fn paths(&self) -> impl IndexedParallelIterator<Item = PathView<'_>> + '_ {
        let len = self.path_len();
        let grid = &self.grid;
        let dim = self.dim;
        self.data.par_chunks(len).map(move |incs| PathView { grid, dim, incs })
    }

    /// `W_{u_k}` for coordinate `j` of every path.
    pub fn values_at(&self, k: usize, j: usize) -> Vec<f64> {
        self.paths().map(|p| p.value(k, j)).collect()
    }

    /// Same increments re-cut to node-major layout `(cell * n_paths + path) * dim + j`.
    #[cfg(test)]
    pub(crate) fn to_node_major(&self) -> Vec<f64> {
        self.node_major_window(0, self.grid.n_steps())
    }

    /// Cells `k0..k1` in node-major layout `((cell - k0) * n_paths + path) * dim + j`.
    pub(crate) fn node_major_window(&self, k0: usize, k1: usize) -> Vec<f64> {
        let n = self.grid.n_steps();
        let (d, np) = (self.dim, self.n_paths);
        let mut out = vec![0.0; (k1 - k0) * np * d];
        out.par_chunks_mut(np * d).enumerate().for_each(|(c, row)| {
            let k = k0 + c;
            for p in 0..np {
                let src = (p * n + k) * d;
                row[p * d..(p + 1) * d].copy_from_slice(&self.data[src..src + d]);
            }
        });
        out
    }
}

/// Read-only view of one path's increments.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    grid: &'a TimeGrid,
    dim: usize,
    incs: &'a [f64],
}

impl<'a> PathView<'a> {
    pub fn new(grid: &'a TimeGrid, dim: usize, incs: &'a [f64]) -> Self {
        debug_assert_eq!(incs.len(), grid.n_steps() * dim);
        PathView { grid, dim, incs }
    }

    pub fn grid(&self) -> &'a TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn increments(&self) -> &'a [f64] {
        self.incs
    }

    /// Increment of coordinate `j` over cell `(u_k, u_{k+1}]`.
    #[inline]
    pub fn increment(&self, k: usize, j: usize) -> f64 {
        self.incs[k * self.dim + j]
    }

    /// `W_{u_k} - W_{u_0}` for coordinate `j`.
    pub fn value(&self, k: usize, j: usize) -> f64 {
        (0..k).map(|c| self.increment(c, j)).sum()
    }

    pub fn terminal(&self, j: usize) -> f64 {
        self.value(self.n_steps(), j)
    }

    /// All node values, layout `node * dim + j`.
    pub fn node_levels(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; (self.n_steps() + 1) * d];
        for k in 0..self.n_steps() {
            for j in 0..d {
                out[(k + 1) * d + j] = out[k * d + j] + self.increment(k, j);
            }
        }
        out
    }

    /// Node values `W_{u_0}, ..., W_{u_n}` for coordinate `j`.
    pub fn levels(&self, j: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_steps() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for k in 0..self.n_steps() {
            acc += self.increment(k, j);
            out.push(acc);
        }
        out
    }
}

/// Monte Carlo batch of independent Brownian pairs `(W, W')`.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    stream_id: u64,
    w: Increments,
    w_prime: Increments,
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn w(&self) -> &Increments {
        &self.w
    }

    pub fn w_prime(&self) -> &Increments {
        &self.w_prime
    }
}

/// Fill a batch of increments from the `(seed, stream_id, lane)` substreams.
pub fn sample_increments(
    grid: &TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    stream_id: u64,
    lane: Lane,
) -> Increments {
    let len = grid.n_steps() * dim;
    let scale = grid.step().sqrt();
    let mut data = vec![0.0; n_paths * len];
    data.par_chunks_mut(len).enumerate().for_each(|(p, chunk)| {
        let mut rng = stream_rng(seed, stream_id, lane, p as u64, 0);
        for x in chunk.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = scale * z;
        }
    });
    Increments { grid: *grid, dim, n_paths, data }
}

/// Draw `W` and `W'` for `n_paths` paths on `grid`.
pub fn sample_paths(
    grid: &TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    stream_id: u64,
) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(Error::config("n_paths must be at least 1"));
    }
    if dim == 0 {
        return Err(Error::config("Brownian dimension must be at least 1"));
    }
    let w = sample_increments(grid, dim, n_paths, seed, stream_id, Lane::Primary);
    let w_prime = sample_increments(grid, dim, n_paths, seed, stream_id, Lane::Independent);
    Ok(PathBundle { grid: *grid, dim, n_paths, seed, stream_id, w, w_prime })
}

/// Increments of `W^phi`: `sqrt(1 - phi^2) dW + phi dW'` cell by cell.
pub fn build_coupled_path(bundle: &PathBundle, phi: &CouplingFunction) -> Result<Increments> {
    let cells = phi.cell_values(&bundle.grid)?;
    Ok(couple_increments(&bundle.w, &bundle.w_prime, &cells))
}

pub(crate) fn couple_increments(w: &Increments, w_prime: &Increments, cells: &[f64]) -> Increments {
    let d = w.dim;
    let n = w.grid.n_steps();
    let mut data = vec![0.0; w.data.len()];
    data.par_chunks_mut(n * d)
        .zip(w.data.par_chunks(n * d))
        .zip(w_prime.data.par_chunks(n * d))
        .for_each(|((out, a), b)| {
            for k in 0..n {
                let phi = cells[k];
                let s = k * d..(k + 1) * d;
                if phi == 0.0 {
                    out[s.clone()].copy_from_slice(&a[s]);
                } else if phi == 1.0 {
                    out[s.clone()].copy_from_slice(&b[s]);
                } else {
                    let keep = retained_weight(phi);
                    for i in s {
                        out[i] = keep * a[i] + phi * b[i];
                    }
                }
            }
        });
    Increments { grid: w.grid, dim: d, n_paths: w.n_paths, data }
}
