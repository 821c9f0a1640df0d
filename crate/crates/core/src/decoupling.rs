//! Discrete decoupling fields and long-horizon solves.
//!
//! The field `w(t_i, x)` is built backward over a partition of the master
//! grid: on each subinterval the FBSDE is solved from a cloud of probe
//! initial states with terminal data `w(t_{i+1}, .)`, and `w(t_i, .)` is the
//! polynomial regression of the resulting `Y_{t_i}` on the probe state. For
//! coefficients that read the path, the Brownian level `W_{t_i}` is an extra
//! regression feature.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{retained_weight, CouplingFunction, TimeGrid};
use crate::model::{Ctx, Dims, FbsdeSpec, InitialCondition};
use crate::paths::{build_coupled_path, sample_increments, Increments, PathBundle};
use crate::regression::{LeastSquares, PolynomialModel};
use crate::rng::{stream_rng, Lane};
use crate::solvability::verdict_for;
use crate::solver::{initial_states, solve_on_window, SolutionTriple, SolverConfig, Terminal};
use crate::stats::{ks_critical_1pct, ks_statistic, loglog_slope, stable_mean};

/// Field products `L_w * L_mu3` at or above this trigger a warning.
pub const FIELD_MARGIN: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    grid: TimeGrid,
    /// Node indices on `grid`, first `0`, last `grid.n_steps()`.
    nodes: Vec<usize>,
}

impl Partition {
    /// Partition of `grid` at the given times (which must be grid nodes and
    /// include both ends), optionally checking the mesh against `delta`.
    pub fn new(grid: &TimeGrid, times: &[f64], delta: Option<f64>) -> Result<Self> {
        let nodes = times.iter().map(|&t| grid.require_node(t)).collect::<Result<Vec<_>>>()?;
        Self::from_nodes(grid, nodes, delta)
    }

    pub fn from_nodes(grid: &TimeGrid, nodes: Vec<usize>, delta: Option<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0 || *nodes.last().unwrap() != grid.n_steps() {
            return Err(Error::config("partition must start and end at the grid ends"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("partition nodes must increase strictly"));
        }
        let p = Partition { grid: *grid, nodes };
        if let Some(delta) = delta {
            if p.mesh() > delta * (1.0 + 1e-12) {
                return Err(Error::config(format!("partition mesh {} exceeds delta {delta}", p.mesh())));
            }
        }
        Ok(p)
    }

    /// `n_sub` subintervals of (as near as possible) equal length.
    pub fn uniform(grid: &TimeGrid, n_sub: usize) -> Result<Self> {
        if n_sub == 0 || n_sub > grid.n_steps() {
            return Err(Error::config(format!("cannot split {} cells into {n_sub} pieces", grid.n_steps())));
        }
        let nodes = (0..=n_sub).map(|i| i * grid.n_steps() / n_sub).collect();
        Self::from_nodes(grid, nodes, None)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn times(&self) -> Vec<f64> {
        self.nodes.iter().map(|&k| self.grid.node(k)).collect()
    }

    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn mesh(&self) -> f64 {
        self.nodes.windows(2).map(|w| (w[1] - w[0]) as f64 * self.grid.step()).fold(0.0, f64::max)
    }
}

/// Probe initial states: a Gaussian cloud per partition node matched to the
/// forward state's spread (from a pilot Euler pass with `Y = Z = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeDesign {
    pub n_probes: usize,
    /// Multiplies the pilot standard deviation.
    pub widen: f64,
    /// Floor on the probe standard deviation.
    pub min_spread: f64,
    /// Total degree of the field polynomials.
    pub degree: usize,
    pub seed: u64,
    pub stream_id: u64,
}

impl Default for ProbeDesign {
    fn default() -> Self {
        ProbeDesign { n_probes: 16_384, widen: 1.5, min_spread: 0.5, degree: 3, seed: 0x5eed, stream_id: 77 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldNode {
    pub time: f64,
    /// Index on the master grid.
    pub node: usize,
    /// One polynomial per `Y` component; `None` at the horizon where the
    /// field is the terminal function itself.
    pub models: Option<Vec<PolynomialModel>>,
    /// Largest difference quotient over probe pairs (declared `L_g` at the horizon).
    pub lipschitz_hat: f64,
    /// Probe hull; empty at the horizon.
    pub hull_lower: Vec<f64>,
    pub hull_upper: Vec<f64>,
}

/// JSON-serializable field: node times, basis description, coefficients and
/// the empirical Lipschitz record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecouplingFieldModel {
    pub schema_version: u32,
    pub spec_name: String,
    pub dims: Dims,
    /// Features are `x` followed by `W_t` when set.
    pub brownian_features: bool,
    pub degree: usize,
    pub n_probes: usize,
    pub declared_bound: Option<f64>,
    pub nodes: Vec<FieldNode>,
}

impl DecouplingFieldModel {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn max_lipschitz(&self) -> f64 {
        self.nodes.iter().map(|n| n.lipschitz_hat).fold(0.0, f64::max)
    }

    /// Empirical constants stay below the declared bound up to `tol`.
    pub fn within_declared(&self, tol: f64) -> bool {
        self.declared_bound.map_or(true, |l| self.max_lipschitz() <= l * (1.0 + tol))
    }

    /// `w(t_i, x)` for a non-terminal node `i`; `w_level` is `W_{t_i}` (ignored
    /// without Brownian features). Returns whether `x` had to be clamped to
    /// the probe hull.
    pub fn eval(&self, i: usize, w_level: &[f64], x: &[f64], out: &mut [f64]) -> bool {
        let node = &self.nodes[i];
        let models = node.models.as_ref().expect("terminal field node is evaluated through g");
        let mut clamped = false;
        let mut feat: Vec<f64> = x
            .iter()
            .zip(node.hull_lower.iter().zip(&node.hull_upper))
            .map(|(&v, (&lo, &hi))| {
                let c = v.clamp(lo, hi);
                clamped |= c != v;
                c
            })
            .collect();
        if self.brownian_features {
            feat.extend_from_slice(w_level);
        }
        for (o, m) in out.iter_mut().zip(models) {
            *o = m.eval(&feat);
        }
        clamped
    }

    /// `w(t_i, x)` including the horizon, where `g` of `spec` is used.
    pub fn eval_with_spec(&self, spec: &FbsdeSpec, i: usize, ctx: &Ctx<'_>, x: &[f64], out: &mut [f64]) -> bool {
        if self.nodes[i].models.is_none() {
            spec.coefficients.terminal(ctx, x, out);
            false
        } else {
            self.eval(i, ctx.w, x, out)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Mean and standard deviation of the pilot forward state at each partition node.
fn pilot_spread(spec: &FbsdeSpec, driver: &Increments, partition: &Partition) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let Dims { n: nx, m, d } = spec.dims;
    let grid = partition.grid;
    let last = *partition.nodes.last().unwrap();
    let x0 = initial_states(spec, driver, 0, &spec.initial)?;
    let coef = &spec.coefficients;
    let np = driver.n_paths();
    // states at partition nodes, `(i * np + p) * nx`
    let states: Vec<Vec<f64>> = (0..np)
        .into_par_iter()
        .map(|p| {
            let path = driver.path(p);
            let levels = if spec.path_dependent { path.node_levels() } else { Vec::new() };
            let mut x = x0[p * nx..(p + 1) * nx].to_vec();
            let (y, z) = (vec![0.0; m], vec![0.0; m * d]);
            let (mut b, mut s) = (vec![0.0; nx], vec![0.0; nx * d]);
            let mut out = Vec::with_capacity(partition.nodes.len() * nx);
            let mut next = 0;
            for k in 0..=last {
                if partition.nodes[next] == k {
                    out.extend_from_slice(&x);
                    next += 1;
                }
                if k == last {
                    break;
                }
                let ctx = Ctx {
                    u: grid.node(k),
                    node: k,
                    w: if levels.is_empty() { &[][..] } else { &levels[k * d..(k + 1) * d] },
                    path,
                };
                coef.drift(&ctx, &x, &y, &z, &mut b);
                coef.diffusion(&ctx, &x, &y, &z, &mut s);
                for i in 0..nx {
                    let noise: f64 = (0..d).map(|j| s[i * d + j] * path.increment(k, j)).sum();
                    x[i] += b[i] * grid.step() + noise;
                }
            }
            out
        })
        .collect();
    Ok((0..partition.nodes.len())
        .map(|i| {
            let mut mean = vec![0.0; nx];
            let mut sd = vec![0.0; nx];
            for c in 0..nx {
                let col: Vec<f64> = states.iter().map(|s| s[i * nx + c]).collect();
                let mu = stable_mean(&col);
                let var = stable_mean(&col.iter().map(|v| (v - mu) * (v - mu)).collect::<Vec<_>>());
                mean[c] = mu;
                sd[c] = var.sqrt();
            }
            (mean, sd)
        })
        .collect())
}

/// Largest `|w(x) - w(x')| / |x - x'|` over random probe pairs and small
/// coordinate steps, with `W_t` held fixed. Probes outside the central 98%
/// of any coordinate are skipped, where the polynomial tails are unreliable.
fn empirical_lipschitz(field: &DecouplingFieldModel, i: usize, probes: &[f64], levels: &[f64], nx: usize, d: usize) -> f64 {
    let m = field.dims.m;
    let np = probes.len() / nx;
    let count = np.min(4096);
    let node = &field.nodes[i];
    let h: Vec<f64> = node.hull_lower.iter().zip(&node.hull_upper).map(|(a, b)| 1e-4 * (b - a).max(1e-8)).collect();
    let bounds: Vec<(f64, f64)> = (0..nx)
        .map(|c| {
            let mut col: Vec<f64> = (0..np).map(|p| probes[p * nx + c]).collect();
            col.sort_by(f64::total_cmp);
            (col[np / 100], col[np - 1 - np / 100])
        })
        .collect();
    let central = |x: &[f64]| x.iter().zip(&bounds).all(|(v, (lo, hi))| v >= lo && v <= hi);
    (0..count)
        .into_par_iter()
        .filter(|&p| central(&probes[p * nx..(p + 1) * nx]))
        .map(|p| {
            let x = &probes[p * nx..(p + 1) * nx];
            let w = if levels.is_empty() { &[][..] } else { &levels[p * d..(p + 1) * d] };
            let mut wx = vec![0.0; m];
            field.eval(i, w, x, &mut wx);
            let mut best: f64 = 0.0;
            let mut try_point = |x2: &[f64]| {
                let dist = crate::stats::norm(&x.iter().zip(x2).map(|(a, b)| a - b).collect::<Vec<_>>());
                if dist > 0.0 {
                    let mut w2 = vec![0.0; m];
                    field.eval(i, w, x2, &mut w2);
                    let gap = crate::stats::norm(&wx.iter().zip(&w2).map(|(a, b)| a - b).collect::<Vec<_>>());
                    best = best.max(gap / dist);
                }
            };
            let q = (p * 7919 + 1) % np;
            if central(&probes[q * nx..(q + 1) * nx]) {
                try_point(&probes[q * nx..(q + 1) * nx]);
            }
            for c in 0..nx {
                let mut x2 = x.to_vec();
                x2[c] = (x2[c] + h[c]).min(node.hull_upper[c]);
                if x2[c] == x[c] {
                    x2[c] -= h[c];
                }
                try_point(&x2);
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// Backward construction on a fresh probe batch drawn from `design`.
pub fn build_field(
    spec: &FbsdeSpec,
    partition: &Partition,
    design: &ProbeDesign,
    cfg: &SolverConfig,
) -> Result<DecouplingFieldModel> {
    if design.n_probes < 2 {
        return Err(Error::config("need at least two probes"));
    }
    let driver = sample_increments(&partition.grid, spec.dims.d, design.n_probes, design.seed, design.stream_id, Lane::Primary);
    build_field_on(spec, partition, &driver, design, cfg)
}

/// Backward construction with the probe Brownian paths supplied by the caller.
pub fn build_field_on(
    spec: &FbsdeSpec,
    partition: &Partition,
    driver: &Increments,
    design: &ProbeDesign,
    cfg: &SolverConfig,
) -> Result<DecouplingFieldModel> {
    let Dims { n: nx, m, d } = spec.dims;
    if driver.grid() != &partition.grid {
        return Err(Error::config("probe paths and partition use different grids"));
    }
    let np = driver.n_paths();
    let brownian = spec.path_dependent;
    let l_mu3 = spec.lipschitz.mu[2];
    let pilot = pilot_spread(spec, driver, partition)?;
    // probe standard deviations, widened forward so that each cloud covers
    // the previous one after diffusing over the subinterval
    let mut spread: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(pilot.len());
    for (i, (mean, sd)) in pilot.iter().enumerate() {
        let own: Vec<f64> = sd.iter().map(|s| design.widen * s.max(design.min_spread)).collect();
        let s = if i == 0 {
            own
        } else {
            let (_, prev) = &spread[i - 1];
            let prev_sd = &pilot[i - 1].1;
            own.iter()
                .enumerate()
                .map(|(c, &o)| {
                    let growth = (sd[c] * sd[c] - prev_sd[c] * prev_sd[c]).max(0.0);
                    o.max((prev[c] * prev[c] + growth).sqrt())
                })
                .collect()
        };
        spread.push((mean.clone(), s));
    }
    let n_int = partition.n_intervals();
    let grid = partition.grid;

    let mut field = DecouplingFieldModel {
        schema_version: 1,
        spec_name: spec.name.clone(),
        dims: spec.dims,
        brownian_features: brownian,
        degree: design.degree,
        n_probes: np,
        declared_bound: None,
        nodes: Vec::with_capacity(n_int + 1),
    };
    // built back to front, reversed at the end
    let mut back: Vec<FieldNode> = vec![FieldNode {
        time: grid.node(partition.nodes[n_int]),
        node: partition.nodes[n_int],
        models: None,
        lipschitz_hat: spec.lipschitz.g,
        hull_lower: Vec::new(),
        hull_upper: Vec::new(),
    }];
    let solver_cfg = SolverConfig {
        regression: crate::regression::RegressionConfig { brownian_features: brownian, ..cfg.regression },
        ..*cfg
    };
    let coef = &spec.coefficients;

    for i in (0..n_int).rev() {
        let (k0, k1) = (partition.nodes[i], partition.nodes[i + 1]);
        let l_next = back.last().unwrap().lipschitz_hat;
        let verdict = verdict_for(l_next, l_mu3, 2.0, None)?;
        if !verdict.pass {
            return Err(Error::RegularityLoss { time: grid.node(k1), product: verdict.product, threshold: 1.0 });
        }
        if verdict.product >= FIELD_MARGIN {
            log::warn!(
                "field at t = {}: L_w * L_mu3 = {:.3} is within the {FIELD_MARGIN} margin",
                grid.node(k1),
                verdict.product
            );
        }

        let (mean, sd) = &spread[i];
        let mut probes = vec![0.0; np * nx];
        probes.par_chunks_mut(nx).enumerate().for_each(|(p, out)| {
            let mut rng = stream_rng(design.seed, design.stream_id, Lane::Auxiliary, p as u64, i as u64);
            for c in 0..nx {
                let z: f64 = rng.sample(StandardNormal);
                out[c] = mean[c] + sd[c] * z;
            }
        });
        let initial = InitialCondition::PerPath(std::sync::Arc::new(probes.clone()));

        let next_node = back.last().unwrap().clone();
        let next_field = DecouplingFieldModel { nodes: vec![next_node], ..field.clone() };
        let eval_next = move |ctx: &Ctx<'_>, x: &[f64], out: &mut [f64]| {
            next_field.eval(0, ctx.w, x, out);
        };
        let terminal = if i + 1 == n_int { Terminal::Spec } else { Terminal::Field(&eval_next) };
        let sol = solve_on_window(spec, driver, k0, k1, &initial, terminal, &solver_cfg)?;

        // Y_{t_i} regression target: terminal value plus generator sum with the
        // whole martingale part removed (unbiased since Z is predictable)
        let dt = grid.step();
        let n_loc = k1 - k0;
        let levels: Vec<f64> = if brownian {
            (0..np).into_par_iter().flat_map_iter(|p| (0..d).map(move |j| driver.path(p).value(k0, j)).collect::<Vec<_>>()).collect()
        } else {
            Vec::new()
        };
        let mut targets = vec![vec![0.0; np]; m];
        let rows: Vec<Vec<f64>> = (0..np)
            .into_par_iter()
            .map(|p| {
                let path = driver.path(p);
                let all_levels = if spec.path_dependent { path.node_levels() } else { Vec::new() };
                let mut acc = sol.y(n_loc, p).to_vec();
                let mut f = vec![0.0; m];
                for c in 0..n_loc {
                    let (y1, z1) = (sol.y(c + 1, p), sol.z(c + 1, p));
                    if coef.has_generator() {
                        let g = k0 + c;
                        let ctx = Ctx {
                            u: grid.node(g),
                            node: g,
                            w: if all_levels.is_empty() { &[][..] } else { &all_levels[g * d..(g + 1) * d] },
                            path,
                        };
                        coef.generator(&ctx, sol.x(c, p), y1, z1, &mut f);
                    }
                    for r in 0..m {
                        let mart: f64 = (0..d).map(|j| z1[r * d + j] * path.increment(k0 + c, j)).sum();
                        acc[r] += f[r] * dt - mart;
                    }
                }
                acc
            })
            .collect();
        for (p, row) in rows.iter().enumerate() {
            for r in 0..m {
                targets[r][p] = row[r];
            }
        }
        let (features, nf) = if brownian {
            let mut f = Vec::with_capacity(np * (nx + d));
            for p in 0..np {
                f.extend_from_slice(&probes[p * nx..(p + 1) * nx]);
                f.extend_from_slice(&levels[p * d..(p + 1) * d]);
            }
            (f, nx + d)
        } else {
            (probes.clone(), nx)
        };
        let ls = LeastSquares::fit(&features, nf, design.degree)?;
        let models: Vec<PolynomialModel> = targets.iter().map(|t| ls.model(t)).collect();
        let mut lower = vec![f64::INFINITY; nx];
        let mut upper = vec![f64::NEG_INFINITY; nx];
        for p in 0..np {
            for c in 0..nx {
                lower[c] = lower[c].min(probes[p * nx + c]);
                upper[c] = upper[c].max(probes[p * nx + c]);
            }
        }
        let node = FieldNode {
            time: grid.node(k0),
            node: k0,
            models: Some(models),
            lipschitz_hat: 0.0,
            hull_lower: lower,
            hull_upper: upper,
        };
        let probe_field = DecouplingFieldModel { nodes: vec![node.clone()], ..field.clone() };
        let l_hat = empirical_lipschitz(&probe_field, 0, &probes, &levels, nx, d);
        back.push(FieldNode { lipschitz_hat: l_hat, ..node });
    }
    back.reverse();
    field.nodes = back;
    Ok(field)
}

/// Stitched full-horizon solution with per-node decoupling residuals.
#[derive(Debug, Clone)]
pub struct LongHorizonSolution {
    pub solution: SolutionTriple,
    /// `E|Y_{t_i} - w(t_i, X_{t_i})|^2` for `i = 0..N-1`.
    pub decoupling_residuals: Vec<f64>,
    /// Evaluations clamped to the probe hull.
    pub clamped: usize,
}

/// Solve forward over the partition, using the field as terminal data on
/// every subinterval but the last.
pub fn solve_long_horizon(
    spec: &FbsdeSpec,
    partition: &Partition,
    field: &DecouplingFieldModel,
    bundle: &PathBundle,
    cfg: &SolverConfig,
) -> Result<LongHorizonSolution> {
    if bundle.grid() != &partition.grid {
        return Err(Error::config("bundle and partition use different grids"));
    }
    if field.n_nodes() != partition.nodes.len() || field.nodes.iter().zip(&partition.nodes).any(|(f, &k)| f.node != k) {
        return Err(Error::config("field was built on a different partition"));
    }
    let Dims { n: nx, m, d } = spec.dims;
    let zl = m * d;
    let driver = bundle.w();
    let np = bundle.n_paths();
    let grid = partition.grid;
    let n_int = partition.n_intervals();
    let nodes = grid.n_steps() + 1;
    let mut x = vec![0.0; nodes * np * nx];
    let mut y = vec![0.0; nodes * np * m];
    let mut z = vec![0.0; nodes * np * zl];
    let mut residuals = Vec::with_capacity(n_int);
    let clamped = std::sync::atomic::AtomicUsize::new(0);
    let mut initial = spec.initial.clone();
    let mut cfg_sub = *cfg;
    if spec.path_dependent {
        cfg_sub.regression.brownian_features = cfg.regression.brownian_features || field.brownian_features;
    }
    let mut last_sol = None;
    for i in 0..n_int {
        let (k0, k1) = (partition.nodes[i], partition.nodes[i + 1]);
        let eval_next = |ctx: &Ctx<'_>, xs: &[f64], out: &mut [f64]| {
            if field.eval(i + 1, ctx.w, xs, out) {
                clamped.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
        };
        let terminal = if i + 1 == n_int { Terminal::Spec } else { Terminal::Field(&eval_next) };
        let sol = solve_on_window(spec, driver, k0, k1, &initial, terminal, &cfg_sub)?;
        let n_loc = k1 - k0;
        let upto = if i + 1 == n_int { n_loc + 1 } else { n_loc };
        for c in 0..upto {
            let g = k0 + c;
            x[g * np * nx..(g + 1) * np * nx].copy_from_slice(sol.x_node(c));
            y[g * np * m..(g + 1) * np * m].copy_from_slice(sol.y_node(c));
        }
        for c in 1..=n_loc {
            let g = k0 + c;
            z[g * np * zl..(g + 1) * np * zl].copy_from_slice(sol.z_node(c));
        }
        // decoupling residual at t_i
        let res: Vec<f64> = (0..np)
            .into_par_iter()
            .map(|p| {
                let w: Vec<f64> = if field.brownian_features {
                    (0..d).map(|j| driver.path(p).value(k0, j)).collect()
                } else {
                    Vec::new()
                };
                let mut out = vec![0.0; m];
                field.eval(i, &w, sol.x(0, p), &mut out);
                out.iter().zip(sol.y(0, p)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .collect();
        residuals.push(stable_mean(&res));
        initial = InitialCondition::PerPath(std::sync::Arc::new(sol.x_node(n_loc).to_vec()));
        last_sol = Some(sol);
    }
    let clamped = clamped.into_inner();
    if clamped > 0 {
        log::warn!("{clamped} field evaluations were clamped to the probe hull");
    }
    let solution = if n_int == 1 {
        last_sol.unwrap()
    } else {
        SolutionTriple::from_parts(grid, spec.dims, np, x, y, z)?.with_start_node(0)
    };
    Ok(LongHorizonSolution { solution, decoupling_residuals: residuals, clamped })
}

/// `E|w(r, x) - w(s, x)|^p` over node pairs `s < r` and the log-log slope of
/// the gaps against `r - s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRegularity {
    pub x: Vec<f64>,
    pub p: f64,
    /// `(s, r, E|w(r,x) - w(s,x)|^p)`.
    pub gaps: Vec<(f64, f64, f64)>,
    pub slope: Option<f64>,
}

/// Time regularity of the field at `x`. Fields depending on `W_t` are
/// averaged over 4096 Brownian levels drawn from `seed`.
pub fn field_time_regularity(
    field: &DecouplingFieldModel,
    spec: &FbsdeSpec,
    x: &[f64],
    p: f64,
    seed: u64,
) -> Result<FieldRegularity> {
    let Dims { n: nx, m, d } = spec.dims;
    if x.len() != nx {
        return Err(Error::Dimension(format!("probe point has {} entries, n = {nx}", x.len())));
    }
    let n_nodes = field.n_nodes();
    let samples = if field.brownian_features || spec.path_dependent { 4096 } else { 1 };
    let times: Vec<f64> = field.nodes.iter().map(|n| n.time).collect();
    // values[s][i]: w(t_i, x) under sample s
    let grid = TimeGrid::new(times[0], times[n_nodes - 1], field.nodes[n_nodes - 1].node - field.nodes[0].node)?;
    let values: Vec<Vec<Vec<f64>>> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(seed, 0, Lane::Auxiliary, s as u64, 0);
            let mut incs = vec![0.0; grid.n_steps() * d];
            for v in incs.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v = g * grid.step().sqrt();
            }
            let path = crate::paths::PathView::new(&grid, d, &incs);
            let levels = path.node_levels();
            (0..n_nodes)
                .map(|i| {
                    let k = field.nodes[i].node - field.nodes[0].node;
                    let w = &levels[k * d..(k + 1) * d];
                    let ctx = Ctx { u: times[i], node: field.nodes[i].node, w, path };
                    let mut out = vec![0.0; m];
                    field.eval_with_spec(spec, i, &ctx, x, &mut out);
                    out
                })
                .collect()
        })
        .collect();
    let mut gaps = Vec::new();
    for a in 0..n_nodes {
        for b in a + 1..n_nodes {
            let g: Vec<f64> = values
                .iter()
                .map(|v| crate::stats::pow_abs(crate::stats::norm(&v[b].iter().zip(&v[a]).map(|(u, w)| u - w).collect::<Vec<_>>()), p))
                .collect();
            gaps.push((times[a], times[b], stable_mean(&g)));
        }
    }
    let dx: Vec<f64> = gaps.iter().map(|g| g.1 - g.0).collect();
    let dy: Vec<f64> = gaps.iter().map(|g| g.2).collect();
    Ok(FieldRegularity { x: x.to_vec(), p, slope: loglog_slope(&dx, &dy), gaps })
}

/// Two-sample comparison of a field value under coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferenceReport {
    pub node: usize,
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

/// Build the field once on probe paths `W` and once on `W^phi`, then compare
/// the law of `w^phi(t_i, x)` (field from the coupled probes, evaluated on
/// the coupled levels of `bundle`) with the transferred value `w(t_i, x)`
/// evaluated on the coupled levels of an independent copy.
pub fn field_transference_check(
    spec: &FbsdeSpec,
    partition: &Partition,
    design: &ProbeDesign,
    cfg: &SolverConfig,
    phi: &CouplingFunction,
    x: &[f64],
    i: usize,
    bundle: &PathBundle,
) -> Result<TransferenceReport> {
    let probe_bundle =
        crate::paths::sample_paths(&partition.grid, spec.dims.d, design.n_probes, design.seed, design.stream_id)?;
    let coupled_probes = build_coupled_path(&probe_bundle, phi)?;
    let base_field = build_field_on(spec, partition, probe_bundle.w(), design, cfg)?;
    let coupled_field = build_field_on(spec, partition, &coupled_probes, design, cfg)?;
    if i >= partition.n_intervals() {
        return Err(Error::config("transference is checked at non-terminal nodes"));
    }
    let coupled = build_coupled_path(bundle, phi)?;
    let k = partition.nodes[i];
    let d = spec.dims.d;
    let half = bundle.n_paths() / 2;
    if half == 0 {
        return Err(Error::config("transference check needs at least two paths"));
    }
    let value = |field: &DecouplingFieldModel, p: usize| -> f64 {
        let w: Vec<f64> = (0..d).map(|j| coupled.path(p).value(k, j)).collect();
        let mut out = vec![0.0; spec.dims.m];
        field.eval(i, &w, x, &mut out);
        out[0]
    };
    let a: Vec<f64> = (0..half).into_par_iter().map(|p| value(&coupled_field, p)).collect();
    let b: Vec<f64> = (half..2 * half).into_par_iter().map(|p| value(&base_field, p)).collect();
    let statistic = ks_statistic(&a, &b);
    let critical = ks_critical_1pct(a.len(), b.len());
    // deterministic fields are constants: compare them directly
    let pass = if !spec.path_dependent { (a[0] - b[0]).abs() < 1e-2 } else { statistic <= critical };
    Ok(TransferenceReport { node: i, statistic, critical, pass })
}

/// Relative size of `phi Z_bar_1 - sqrt(1 - phi^2) Z_bar_2` for the augmented
/// solution on cells with `phi > 0`: `sqrt(E sum |..|^2) / sqrt(E sum |Z_bar|^2)`.
pub fn z_block_proportionality(aug_sol: &SolutionTriple, cells: &[f64], d: usize) -> f64 {
    let m = aug_sol.dims().m;
    let k0 = aug_sol.start_node();
    let n = aug_sol.n_steps();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 1..=n {
        let phi = cells[k0 + k - 1];
        if phi == 0.0 {
            continue;
        }
        let keep = retained_weight(phi);
        let row: Vec<(f64, f64)> = (0..aug_sol.n_paths())
            .into_par_iter()
            .map(|p| {
                let z = aug_sol.z(k, p);
                let (z1, z2) = crate::augmented::split_blocks(z, m, d);
                let r: f64 = z1.iter().zip(&z2).map(|(a, b)| (phi * a - keep * b).powi(2)).sum();
                (r, crate::stats::norm_sq(z))
            })
            .collect();
        num += stable_mean(&row.iter().map(|r| r.0).collect::<Vec<_>>());
        den += stable_mean(&row.iter().map(|r| r.1).collect::<Vec<_>>());
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearCoefficients;

    #[test]
    fn partition_validation() {
        let g = TimeGrid::unit(1.0, 8).unwrap();
        let p = Partition::uniform(&g, 4).unwrap();
        assert_eq!(p.nodes(), &[0, 2, 4, 6, 8]);
        assert!((p.mesh() - 0.25).abs() < 1e-15);
        assert!(Partition::new(&g, &[0.0, 0.5, 1.0], Some(0.25)).is_err());
        assert!(Partition::new(&g, &[0.0, 0.3, 1.0], None).is_err());
        assert!(Partition::new(&g, &[0.0, 0.5], None).is_err());
    }

    #[test]
    fn constant_terminal_field_is_exact() {
        let g = TimeGrid::unit(1.0, 16).unwrap();
        let part = Partition::uniform(&g, 4).unwrap();
        let spec = LinearCoefficients { g0: 1.7, s0: vec![1.0], ..LinearCoefficients::zero(1) }.into_spec(0.0).unwrap();
        let design = ProbeDesign { n_probes: 512, ..ProbeDesign::default() };
        let field = build_field(&spec, &part, &design, &SolverConfig::default()).unwrap();
        let mut out = [0.0];
        for i in 0..4 {
            for x in [-2.0, 0.0, 3.0] {
                field.eval(i, &[], &[x], &mut out);
                assert_eq!(out[0], 1.7);
            }
        }
        let back = DecouplingFieldModel::from_json(&field.to_json().unwrap()).unwrap();
        assert_eq!(back, field);
    }

    #[test]
    fn regularity_loss_aborts() {
        let g = TimeGrid::unit(1.0, 8).unwrap();
        let part = Partition::uniform(&g, 2).unwrap();
        let lin = LinearCoefficients { a: 1.2, gx: 0.9, s0: vec![1.0], ..LinearCoefficients::zero(1) };
        let spec = lin.into_spec(0.0).unwrap();
        let design = ProbeDesign { n_probes: 256, ..ProbeDesign::default() };
        assert!(matches!(
            build_field(&spec, &part, &design, &SolverConfig::default()),
            Err(Error::RegularityLoss { .. })
        ));
    }
}
