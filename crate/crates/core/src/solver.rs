//! Discrete Picard iteration for the coupled FBSDE with least-squares Monte
//! Carlo conditional expectations.
//!
//! Storage is node-major. `Z` has one entry per node: entry 0 is the value at
//! the start instant and is always zero, entry `k >= 1` is the value on cell
//! `(u_{k-1}, u_k]`, which is `F_{u_{k-1}}`-measurable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Arity;
use crate::grid::TimeGrid;
use crate::model::{Ctx, Dims, FbsdeSpec, InitialCondition};
use crate::paths::{Increments, PathBundle, PathView};
use crate::regression::{LeastSquares, RegressionConfig};
use crate::solvability::check_solvability;
use crate::stats::{pow_abs, pow_half, stable_mean};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardConfig {
    pub max_iter: usize,
    /// Stop once the batch sup norm of the change in `X` is below this.
    pub tol: f64,
    /// Refuse intervals longer than this (usually the probed `delta`);
    /// `None` skips the check.
    pub max_interval: Option<f64>,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig { max_iter: 50, tol: 1e-6, max_interval: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub picard: PicardConfig,
    pub regression: RegressionConfig,
}

/// Terminal condition of a window solve.
#[derive(Clone, Copy)]
pub enum Terminal<'a> {
    /// `g` of the spec.
    Spec,
    /// A fitted map `(ctx, x) -> y`, e.g. a decoupling field.
    Field(&'a (dyn Fn(&Ctx<'_>, &[f64], &mut [f64]) + Sync)),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PicardTrace {
    /// Sup-norm change of `X` after each iteration.
    pub residuals: Vec<f64>,
}

impl PicardTrace {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    /// Geometric mean of successive residual ratios, ignoring residuals at
    /// round-off level. `None` if fewer than two usable residuals.
    pub fn contraction_ratio(&self) -> Option<f64> {
        let r: Vec<f64> = self.residuals.iter().copied().take_while(|&v| v > 1e-12).collect();
        if r.len() < 2 {
            return None;
        }
        let logs: f64 = r.windows(2).map(|w| (w[1] / w[0]).ln()).sum();
        Some((logs / (r.len() - 1) as f64).exp())
    }

    pub fn max_ratio(&self) -> Option<f64> {
        let r: Vec<f64> = self.residuals.iter().copied().take_while(|&v| v > 1e-12).collect();
        r.windows(2).map(|w| w[1] / w[0]).reduce(f64::max)
    }
}

/// Discretized `(X, Y, Z)` for a batch of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTriple {
    grid: TimeGrid,
    start_node: usize,
    dims: Dims,
    n_paths: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    trace: PicardTrace,
}

impl SolutionTriple {
    /// Assemble a triple from node-major arrays (`(node * n_paths + path) * width`).
    /// The start-instant `Z` entries are forced to zero.
    pub fn from_parts(
        grid: TimeGrid,
        dims: Dims,
        n_paths: usize,
        x: Vec<f64>,
        y: Vec<f64>,
        mut z: Vec<f64>,
    ) -> Result<Self> {
        let nodes = grid.n_steps() + 1;
        if x.len() != nodes * n_paths * dims.n
            || y.len() != nodes * n_paths * dims.m
            || z.len() != nodes * n_paths * dims.z_len()
        {
            return Err(Error::Dimension("solution arrays do not match grid, batch and dimensions".into()));
        }
        z[..n_paths * dims.z_len()].fill(0.0);
        Ok(SolutionTriple { grid, start_node: 0, dims, n_paths, x, y, z, trace: PicardTrace::default() })
    }

    pub(crate) fn with_start_node(mut self, k0: usize) -> Self {
        self.start_node = k0;
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Node of the driving grid where this solution starts.
    pub fn start_node(&self) -> usize {
        self.start_node
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn trace(&self) -> &PicardTrace {
        &self.trace
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn x(&self, k: usize, p: usize) -> &[f64] {
        let n = self.dims.n;
        &self.x[(k * self.n_paths + p) * n..(k * self.n_paths + p + 1) * n]
    }

    pub fn y(&self, k: usize, p: usize) -> &[f64] {
        let m = self.dims.m;
        &self.y[(k * self.n_paths + p) * m..(k * self.n_paths + p + 1) * m]
    }

    /// `Z` on cell `(u_{k-1}, u_k]`; zero for `k = 0`.
    pub fn z(&self, k: usize, p: usize) -> &[f64] {
        let w = self.dims.z_len();
        &self.z[(k * self.n_paths + p) * w..(k * self.n_paths + p + 1) * w]
    }

    /// First coordinates of `X` at node `k` across the batch.
    pub fn x_node(&self, k: usize) -> &[f64] {
        &self.x[k * self.n_paths * self.dims.n..(k + 1) * self.n_paths * self.dims.n]
    }

    pub fn y_node(&self, k: usize) -> &[f64] {
        &self.y[k * self.n_paths * self.dims.m..(k + 1) * self.n_paths * self.dims.m]
    }

    pub fn z_node(&self, k: usize) -> &[f64] {
        let w = self.dims.z_len();
        &self.z[k * self.n_paths * w..(k + 1) * self.n_paths * w]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Time-integrated L2 distances `sqrt(E sum_k |A_k - B_k|^2 du)` of `X`, `Y`
/// and `Z` between two solutions on the same grid and batch.
pub fn l2_gaps(a: &SolutionTriple, b: &SolutionTriple) -> Result<[f64; 3]> {
    if a.grid != b.grid || a.dims != b.dims || a.n_paths != b.n_paths {
        return Err(Error::Dimension("solutions live on different grids or batches".into()));
    }
    let dt = a.grid.step();
    let n = a.n_steps();
    let per_path = |get: &(dyn Fn(&SolutionTriple, usize, usize) -> &[f64] + Sync)| -> f64 {
        let v: Vec<f64> = (0..a.n_paths)
            .into_par_iter()
            .map(|p| (1..=n).map(|k| sq_dist(get(a, k, p), get(b, k, p))).sum::<f64>() * dt)
            .collect();
        stable_mean(&v).sqrt()
    };
    Ok([per_path(&|s, k, p| s.x(k, p)), per_path(&|s, k, p| s.y(k, p)), per_path(&|s, k, p| s.z(k, p))])
}

/// `E[ sup|X|^p + sup|Y|^p + (int |Z|^2)^{p/2} ]` with sups over grid nodes.
pub fn theta_norm(sol: &SolutionTriple, p: f64) -> f64 {
    let n = sol.n_steps();
    let dt = sol.grid.step();
    let v: Vec<f64> = (0..sol.n_paths)
        .into_par_iter()
        .map(|q| {
            let sx = (0..=n).map(|k| crate::stats::norm(sol.x(k, q))).fold(0.0, f64::max);
            let sy = (0..=n).map(|k| crate::stats::norm(sol.y(k, q))).fold(0.0, f64::max);
            let iz: f64 = (1..=n).map(|k| crate::stats::norm_sq(sol.z(k, q))).sum::<f64>() * dt;
            pow_abs(sx, p) + pow_abs(sy, p) + pow_half(iz, p)
        })
        .collect();
    stable_mean(&v)
}

/// Per-batch data of one window solve.
struct Window<'a> {
    spec: &'a FbsdeSpec,
    driver: &'a Increments,
    grid: TimeGrid,
    k0: usize,
    n: usize,
    np: usize,
    dt: f64,
    /// Window increments, node-major.
    dw: Vec<f64>,
    /// `W` at window nodes, node-major; empty when not needed.
    levels: Vec<f64>,
    cfg: SolverConfig,
}

impl<'a> Window<'a> {
    fn new(spec: &'a FbsdeSpec, driver: &'a Increments, k0: usize, k1: usize, cfg: SolverConfig) -> Result<Self> {
        if driver.dim() != spec.dims.d {
            return Err(Error::Dimension(format!(
                "spec expects d = {}, driver has {}",
                spec.dims.d,
                driver.dim()
            )));
        }
        let grid = driver.grid().subgrid(k0, k1)?;
        let (n, np, d) = (k1 - k0, driver.n_paths(), driver.dim());
        let dw = driver.node_major_window(k0, k1);
        let levels = if spec.path_dependent || cfg.regression.brownian_features {
            let mut lv = vec![0.0; (n + 1) * np * d];
            lv[..np * d].par_chunks_mut(d).enumerate().for_each(|(p, out)| {
                let path = driver.path(p);
                for (j, o) in out.iter_mut().enumerate() {
                    *o = path.value(k0, j);
                }
            });
            for c in 0..n {
                let (head, tail) = lv.split_at_mut((c + 1) * np * d);
                let prev = &head[c * np * d..];
                for ((o, a), b) in tail[..np * d].iter_mut().zip(prev).zip(&dw[c * np * d..(c + 1) * np * d]) {
                    *o = a + b;
                }
            }
            lv
        } else {
            Vec::new()
        };
        Ok(Window { spec, driver, grid, k0, n, np, dt: grid.step(), dw, levels, cfg })
    }

    fn ctx(&self, c: usize, p: usize) -> Ctx<'_> {
        let d = self.spec.dims.d;
        let w = if self.levels.is_empty() {
            &[][..]
        } else {
            &self.levels[(c * self.np + p) * d..(c * self.np + p + 1) * d]
        };
        Ctx { u: self.grid.node(c), node: self.k0 + c, w, path: self.driver.path(p) }
    }

    fn initial_states(&self, initial: &InitialCondition) -> Result<Vec<f64>> {
        let n = self.spec.dims.n;
        match initial {
            InitialCondition::Fixed(x0) => {
                if x0.len() != n {
                    return Err(Error::Dimension(format!("initial state has {} entries, n = {n}", x0.len())));
                }
                Ok(x0.repeat(self.np))
            }
            InitialCondition::PerPath(v) => {
                if v.len() != self.np * n {
                    return Err(Error::Dimension(format!(
                        "per-path initial states: expected {}, got {}",
                        self.np * n,
                        v.len()
                    )));
                }
                Ok(v.to_vec())
            }
            InitialCondition::Functional(fs) => {
                if fs.len() != n {
                    return Err(Error::Dimension(format!("{} initial functionals for n = {n}", fs.len())));
                }
                for f in fs {
                    f.expect(Arity::Scalar)?;
                }
                if self.k0 == 0 {
                    return Err(Error::config(
                        "a random initial condition needs the solve window to start after the first node",
                    ));
                }
                let prefix = self.driver.grid().subgrid(0, self.k0)?;
                let d = self.driver.dim();
                let mut out = vec![0.0; self.np * n];
                out.par_chunks_mut(n).enumerate().try_for_each(|(p, o)| -> Result<()> {
                    let incs = &self.driver.path(p).increments()[..self.k0 * d];
                    let view = PathView::new(&prefix, d, incs);
                    for (oi, f) in o.iter_mut().zip(fs) {
                        *oi = f.eval_scalar(view)?;
                    }
                    Ok(())
                })?;
                Ok(out)
            }
        }
    }

    fn features(&self, x: &[f64], c: usize) -> (Vec<f64>, usize) {
        let (n, d, np) = (self.spec.dims.n, self.spec.dims.d, self.np);
        let xs = &x[c * np * n..(c + 1) * np * n];
        if !self.cfg.regression.brownian_features {
            return (xs.to_vec(), n);
        }
        let ws = &self.levels[c * np * d..(c + 1) * np * d];
        let mut f = Vec::with_capacity(np * (n + d));
        for p in 0..np {
            f.extend_from_slice(&xs[p * n..(p + 1) * n]);
            f.extend_from_slice(&ws[p * d..(p + 1) * d]);
        }
        (f, n + d)
    }

    fn backward(&self, x: &[f64], y: &mut [f64], z: &mut [f64], terminal: Terminal<'_>) -> Result<()> {
        let Dims { n: nx, m, d } = self.spec.dims;
        let (np, n, dt) = (self.np, self.n, self.dt);
        let coef = &self.spec.coefficients;
        let zl = m * d;

        y[n * np * m..].par_chunks_mut(m).enumerate().for_each(|(p, out)| {
            let ctx = self.ctx(n, p);
            let xs = &x[(n * np + p) * nx..(n * np + p + 1) * nx];
            match terminal {
                Terminal::Spec => coef.terminal(&ctx, xs, out),
                Terminal::Field(f) => f(&ctx, xs, out),
            }
        });

        let mut target = vec![0.0; np];
        let mut fitted = vec![0.0; np];
        let mut mvals = vec![0.0; np * m];
        for k in (0..n).rev() {
            let (feat, nf) = self.features(x, k);
            let ls = LeastSquares::fit(&feat, nf, self.cfg.regression.degree)?;
            let (y_head, y_tail) = y.split_at_mut((k + 1) * np * m);
            let y_next = &y_tail[..np * m];
            let y_now = &mut y_head[k * np * m..];
            for i in 0..m {
                target.par_iter_mut().enumerate().for_each(|(p, t)| *t = y_next[p * m + i]);
                ls.project_into(&target, &mut fitted);
                for p in 0..np {
                    mvals[p * m + i] = fitted[p];
                }
            }
            let dw = &self.dw[k * np * d..(k + 1) * np * d];
            let z_next = &mut z[(k + 1) * np * zl..(k + 2) * np * zl];
            for i in 0..m {
                for j in 0..d {
                    target.par_iter_mut().enumerate().for_each(|(p, t)| {
                        *t = (y_next[p * m + i] - mvals[p * m + i]) * dw[p * d + j] / dt;
                    });
                    ls.project_into(&target, &mut fitted);
                    for p in 0..np {
                        z_next[p * zl + i * d + j] = fitted[p];
                    }
                }
            }
            if coef.has_generator() {
                let mut fv = vec![0.0; np * m];
                fv.par_chunks_mut(m).enumerate().for_each(|(p, out)| {
                    let ctx = self.ctx(k, p);
                    coef.generator(
                        &ctx,
                        &x[(k * np + p) * nx..(k * np + p + 1) * nx],
                        &y_next[p * m..(p + 1) * m],
                        &z_next[p * zl..(p + 1) * zl],
                        out,
                    );
                });
                for i in 0..m {
                    target.par_iter_mut().enumerate().for_each(|(p, t)| {
                        *t = y_next[p * m + i] + fv[p * m + i] * dt;
                    });
                    ls.project_into(&target, &mut fitted);
                    for p in 0..np {
                        y_now[p * m + i] = fitted[p];
                    }
                }
            } else {
                y_now[..np * m].copy_from_slice(&mvals);
            }
        }
        Ok(())
    }

    fn forward(&self, x0: &[f64], y: &[f64], z: &[f64], x: &mut [f64]) {
        let Dims { n: nx, m, d } = self.spec.dims;
        let (np, dt) = (self.np, self.dt);
        let coef = &self.spec.coefficients;
        let zl = m * d;
        let split = coef.has_split();
        x[..np * nx].copy_from_slice(x0);
        for k in 0..self.n {
            let (head, tail) = x.split_at_mut((k + 1) * np * nx);
            let x_now = &head[k * np * nx..];
            let dw = &self.dw[k * np * d..(k + 1) * np * d];
            tail[..np * nx].par_chunks_mut(nx).enumerate().for_each(|(p, out)| {
                let ctx = self.ctx(k, p);
                let xs = &x_now[p * nx..(p + 1) * nx];
                let ys = &y[(k * np + p) * m..(k * np + p + 1) * m];
                let zs = &z[((k + 1) * np + p) * zl..((k + 1) * np + p + 1) * zl];
                let mut b = vec![0.0; nx];
                let mut mu = vec![0.0; nx * d];
                coef.drift(&ctx, xs, ys, zs, &mut b);
                if split {
                    let mut a = vec![0.0; nx * d];
                    coef.sigma(&ctx, xs, ys, &mut mu);
                    coef.a_map(&ctx, zs, &mut a);
                    for (s, ai) in mu.iter_mut().zip(&a) {
                        *s += ai;
                    }
                } else {
                    coef.diffusion(&ctx, xs, ys, zs, &mut mu);
                }
                let inc = &dw[p * d..(p + 1) * d];
                for i in 0..nx {
                    let noise: f64 = (0..d).map(|j| mu[i * d + j] * inc[j]).sum();
                    out[i] = xs[i] + b[i] * dt + noise;
                }
            });
        }
    }
}

/// Solve on nodes `k0..=k1` of `driver`'s grid by Picard iteration.
///
/// No solvability gate is applied here; callers decide which Lipschitz
/// constant plays the role of `L_g`.
pub fn solve_on_window(
    spec: &FbsdeSpec,
    driver: &Increments,
    k0: usize,
    k1: usize,
    initial: &InitialCondition,
    terminal: Terminal<'_>,
    cfg: &SolverConfig,
) -> Result<SolutionTriple> {
    let win = Window::new(spec, driver, k0, k1, *cfg)?;
    if let Some(delta) = cfg.picard.max_interval {
        if win.grid.length() > delta * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "interval length {} exceeds the admissible delta {delta}",
                win.grid.length()
            )));
        }
    }
    let Dims { n: nx, m, d } = spec.dims;
    let (np, nodes) = (win.np, win.n + 1);
    let x0 = win.initial_states(initial)?;
    let mut x = vec![0.0; nodes * np * nx];
    let mut y = vec![0.0; nodes * np * m];
    let mut z = vec![0.0; nodes * np * m * d];
    win.forward(&x0, &y, &z, &mut x);
    let mut x_new = x.clone();
    let mut trace = PicardTrace::default();
    loop {
        win.backward(&x, &mut y, &mut z, terminal)?;
        win.forward(&x0, &y, &z, &mut x_new);
        let partials: Vec<f64> = x
            .par_chunks(4096)
            .zip(x_new.par_chunks(4096))
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, nan_max))
            .collect();
        let residual = partials.into_iter().fold(0.0, nan_max);
        trace.residuals.push(residual);
        std::mem::swap(&mut x, &mut x_new);
        if !residual.is_finite() {
            return Err(divergence(trace));
        }
        if residual < cfg.picard.tol {
            break;
        }
        if trace.iterations() >= cfg.picard.max_iter {
            return Err(divergence(trace));
        }
    }
    if trace.residuals.last().copied().unwrap_or(0.0) > 0.0 {
        // refresh Y, Z against the final forward state
        win.backward(&x, &mut y, &mut z, terminal)?;
    }
    log::debug!("{}: Picard converged after {} iterations", spec.name, trace.iterations());
    Ok(SolutionTriple { grid: win.grid, start_node: k0, dims: spec.dims, n_paths: np, x, y, z, trace })
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn divergence(trace: PicardTrace) -> Error {
    Error::Divergence {
        iterations: trace.iterations(),
        last: trace.residuals.last().copied().unwrap_or(f64::NAN),
        history: trace.residuals,
    }
}

/// Initial states (`n_paths x n`) that a window solve starting at node `k0`
/// of `driver` would use.
pub fn initial_states(spec: &FbsdeSpec, driver: &Increments, k0: usize, initial: &InitialCondition) -> Result<Vec<f64>> {
    Window::new(spec, driver, k0, k0 + 1, SolverConfig::default())?.initial_states(initial)
}

/// Locate `grid` as a node window `(k0, k1)` of the bundle grid.
pub fn window_of(bundle_grid: &TimeGrid, grid: &TimeGrid) -> Result<(usize, usize)> {
    let k0 = bundle_grid.require_node(grid.t_start())?;
    let k1 = bundle_grid.require_node(grid.t_end())?;
    if k1 <= k0 || k1 - k0 != grid.n_steps() {
        return Err(Error::config(format!(
            "grid [{}, {}] with {} steps is not a window of the path grid",
            grid.t_start(),
            grid.t_end(),
            grid.n_steps()
        )));
    }
    Ok((k0, k1))
}

/// Gate on the `p = 2` solvability condition, then solve on `grid` (a node
/// window of the bundle grid) with the spec's terminal condition.
pub fn solve_small_interval(
    spec: &FbsdeSpec,
    grid: &TimeGrid,
    bundle: &PathBundle,
    picard: PicardConfig,
    regression: RegressionConfig,
) -> Result<SolutionTriple> {
    let verdict = check_solvability(spec, 2.0, None)?;
    if !verdict.pass {
        return Err(Error::NotSolvable(format!(
            "L_g * L_mu3 = {:.4} is not below 1",
            verdict.product
        )));
    }
    let (k0, k1) = window_of(bundle.grid(), grid)?;
    solve_on_window(spec, bundle.w(), k0, k1, &spec.initial, Terminal::Spec, &SolverConfig { picard, regression })
}

/// Data of the a priori estimate: the solution norm and the driver potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub p: f64,
    pub norm: f64,
    pub xi: f64,
    pub g0: f64,
    pub b0: f64,
    pub mu0: f64,
    pub f0: f64,
    pub potential: f64,
    /// `norm / potential`; `None` when the potential vanishes.
    pub ratio: Option<f64>,
    /// Nonzero norm against a zero potential.
    pub contradiction: bool,
}

/// Per-path `[|xi|^p, |g(0)|^p, (int|b^0|)^p, (int|mu^0|^2)^{p/2}, (int|f^0|)^p]`
/// with the integrals over local cells `a..c` of the solution window.
pub(crate) fn zero_function_rows(
    spec: &FbsdeSpec,
    sol: &SolutionTriple,
    driver: &Increments,
    a: usize,
    c: usize,
    p: f64,
) -> Result<Vec<[f64; 5]>> {
    if driver.n_paths() != sol.n_paths() || driver.dim() != spec.dims.d {
        return Err(Error::Dimension("driver does not match the solution batch".into()));
    }
    let Dims { n: nx, m, d } = spec.dims;
    let (k0, n, dt) = (sol.start_node, sol.n_steps(), sol.grid.step());
    let coef = &spec.coefficients;
    Ok((0..sol.n_paths)
        .into_par_iter()
        .map(|q| {
            let path = driver.path(q);
            let levels = if spec.path_dependent { path.node_levels() } else { Vec::new() };
            let ctx = |c: usize| Ctx {
                u: sol.grid.node(c),
                node: k0 + c,
                w: if levels.is_empty() { &[][..] } else { &levels[(k0 + c) * d..(k0 + c + 1) * d] },
                path,
            };
            let (zx, zy, zz) = (vec![0.0; nx], vec![0.0; m], vec![0.0; m * d]);
            let (mut b, mut mu, mut f, mut g) = (vec![0.0; nx], vec![0.0; nx * d], vec![0.0; m], vec![0.0; m]);
            let (mut ib, mut imu, mut iff) = (0.0, 0.0, 0.0);
            for k in a..c {
                let cx = ctx(k);
                coef.drift(&cx, &zx, &zy, &zz, &mut b);
                coef.diffusion(&cx, &zx, &zy, &zz, &mut mu);
                coef.generator(&cx, &zx, &zy, &zz, &mut f);
                ib += crate::stats::norm(&b) * dt;
                imu += crate::stats::norm_sq(&mu) * dt;
                iff += crate::stats::norm(&f) * dt;
            }
            coef.terminal(&ctx(n), &zx, &mut g);
            [
                pow_abs(crate::stats::norm(sol.x(0, q)), p),
                pow_abs(crate::stats::norm(&g), p),
                pow_abs(ib, p),
                pow_half(imu, p),
                pow_abs(iff, p),
            ]
        })
        .collect())
}

/// Evaluate the zero-functions `b^0`, `mu^0`, `f^0`, `g(0)` along each path
/// of `driver` over the solution window.
pub fn apriori_check(spec: &FbsdeSpec, sol: &SolutionTriple, driver: &Increments, p: f64) -> Result<AprioriReport> {
    let rows = zero_function_rows(spec, sol, driver, 0, sol.n_steps(), p)?;
    let col = |i: usize| stable_mean(&rows.iter().map(|r| r[i]).collect::<Vec<_>>());
    let (xi, g0, b0, mu0, f0) = (col(0), col(1), col(2), col(3), col(4));
    let norm = theta_norm(sol, p);
    let potential = xi + g0 + b0 + mu0 + f0;
    let ratio = (potential > 0.0).then(|| norm / potential);
    Ok(AprioriReport { p, norm, xi, g0, b0, mu0, f0, potential, ratio, contradiction: potential == 0.0 && norm > 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearCoefficients;
    use crate::paths::sample_paths;

    fn martingale_solution(n_steps: usize, n_paths: usize) -> (SolutionTriple, PathBundle) {
        let grid = TimeGrid::unit(1.0, n_steps).unwrap();
        let bundle = sample_paths(&grid, 1, n_paths, 7, 0).unwrap();
        let spec = LinearCoefficients::martingale().into_spec(0.0).unwrap();
        let sol = solve_small_interval(&spec, &grid, &bundle, PicardConfig::default(), RegressionConfig::default())
            .unwrap();
        (sol, bundle)
    }

    #[test]
    fn martingale_forward_is_exact_brownian() {
        let (sol, bundle) = martingale_solution(16, 2000);
        for p in [0, 5, 1999] {
            let lv = bundle.w().path(p).levels(0);
            for k in 0..=16 {
                assert!((sol.x(k, p)[0] - lv[k]).abs() < 1e-12);
            }
        }
        assert_eq!(sol.trace().iterations(), 1);
        assert!(sol.z_node(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_terminal_is_degenerate() {
        let grid = TimeGrid::unit(1.0, 8).unwrap();
        let bundle = sample_paths(&grid, 1, 500, 7, 0).unwrap();
        let lin = LinearCoefficients { g0: 2.5, ..LinearCoefficients::zero(1) };
        let spec = lin.into_spec(0.3).unwrap();
        let sol =
            solve_small_interval(&spec, &grid, &bundle, PicardConfig::default(), RegressionConfig::default()).unwrap();
        for k in 0..=8 {
            assert!(sol.y_node(k).iter().all(|&v| v == 2.5));
            assert!(sol.z_node(k).iter().all(|&v| v == 0.0));
            assert!(sol.x_node(k).iter().all(|&v| v == 0.3));
        }
    }

    #[test]
    fn theta_norm_of_unit_z_is_one() {
        let grid = TimeGrid::unit(1.0, 10).unwrap();
        let np = 5;
        let z: Vec<f64> = (0..11 * np).map(|i| if i < np { 0.0 } else { 1.0 }).collect();
        let sol =
            SolutionTriple::from_parts(grid, Dims::SCALAR, np, vec![0.0; 11 * np], vec![0.0; 11 * np], z).unwrap();
        assert!((theta_norm(&sol, 2.0) - 1.0).abs() < 1e-12);
        let zero = SolutionTriple::from_parts(grid, Dims::SCALAR, np, vec![0.0; 55], vec![0.0; 55], vec![0.0; 55])
            .unwrap();
        assert_eq!(theta_norm(&zero, 2.0), 0.0);
    }

    #[test]
    fn window_must_align() {
        let g = TimeGrid::unit(1.0, 8).unwrap();
        assert_eq!(window_of(&g, &TimeGrid::new(0.25, 0.75, 4).unwrap()).unwrap(), (2, 6));
        assert!(window_of(&g, &TimeGrid::new(0.25, 0.75, 2).unwrap()).is_err());
        assert!(window_of(&g, &TimeGrid::new(0.2, 0.75, 4).unwrap()).is_err());
    }

    #[test]
    fn unsolvable_spec_is_rejected() {
        let grid = TimeGrid::unit(1.0, 4).unwrap();
        let bundle = sample_paths(&grid, 1, 10, 7, 0).unwrap();
        let lin = LinearCoefficients { a: 1.0, gx: 1.0, s0: vec![1.0], ..LinearCoefficients::zero(1) };
        let spec = lin.into_spec(0.0).unwrap();
        let r = solve_small_interval(&spec, &grid, &bundle, PicardConfig::default(), RegressionConfig::default());
        assert!(matches!(r, Err(Error::NotSolvable(_))));
    }

    #[test]
    fn max_interval_is_enforced() {
        let grid = TimeGrid::unit(1.0, 4).unwrap();
        let bundle = sample_paths(&grid, 1, 10, 7, 0).unwrap();
        let spec = LinearCoefficients::martingale().into_spec(0.0).unwrap();
        let picard = PicardConfig { max_interval: Some(0.5), ..PicardConfig::default() };
        assert!(solve_small_interval(&spec, &grid, &bundle, picard, RegressionConfig::default()).is_err());
    }
}
