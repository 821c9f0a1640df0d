//! The coupling operator `C_phi` realized by re-evaluation on `W^phi`, plus
//! the nested Monte Carlo oracle for `E[xi | G^c_a]` and the sandwich check.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{Adaptedness, Arity, PathFunctional};
use crate::grid::{CouplingFunction, TimeGrid};
use crate::paths::{build_coupled_path, Increments, PathBundle, PathView};
use crate::rng::{stream_rng, Lane};
use crate::stats::{pow_abs, Estimate};

/// Samples of `xi` and `xi^phi` drawn on the same `(W, W')`.
#[derive(Debug, Clone)]
pub struct TransferredSamples {
    pub base: Vec<f64>,
    pub coupled: Vec<f64>,
}

impl TransferredSamples {
    /// Per-path `|xi - xi^phi|^p`.
    pub fn gap_powers(&self, p: f64) -> Vec<f64> {
        self.base.iter().zip(&self.coupled).map(|(a, b)| pow_abs(a - b, p)).collect()
    }

    pub fn gap_moment(&self, p: f64) -> Estimate {
        Estimate::from_samples(&self.gap_powers(p))
    }
}

pub fn transfer_variable(f: &PathFunctional, bundle: &PathBundle, phi: &CouplingFunction) -> Result<TransferredSamples> {
    f.expect(Arity::Scalar)?;
    let coupled_paths = build_coupled_path(bundle, phi)?;
    transfer_variable_on(f, bundle.w(), &coupled_paths)
}

/// Evaluate a scalar functional on a base batch and an already-built coupled batch.
pub fn transfer_variable_on(f: &PathFunctional, base: &Increments, coupled: &Increments) -> Result<TransferredSamples> {
    Ok(TransferredSamples { base: f.evaluate_all(base)?, coupled: f.evaluate_all(coupled)? })
}

/// Node values of `H` and `H^phi`, path-major with `n_steps + 1` nodes per path.
#[derive(Debug, Clone)]
pub struct TransferredProcess {
    pub n_nodes: usize,
    pub base: Vec<f64>,
    pub coupled: Vec<f64>,
}

impl TransferredProcess {
    pub fn base_at(&self, k: usize) -> Vec<f64> {
        self.base.iter().skip(k).step_by(self.n_nodes).copied().collect()
    }

    pub fn coupled_at(&self, k: usize) -> Vec<f64> {
        self.coupled.iter().skip(k).step_by(self.n_nodes).copied().collect()
    }
}

pub fn transfer_process(f: &PathFunctional, bundle: &PathBundle, phi: &CouplingFunction) -> Result<TransferredProcess> {
    f.expect(Arity::Process)?;
    match f.tag() {
        Adaptedness::Adapted | Adaptedness::Predictable => {}
        other => {
            return Err(Error::Contract(format!(
                "process '{}' tagged {other:?}; only adapted or predictable processes can be transferred",
                f.name()
            )))
        }
    }
    let coupled_paths = build_coupled_path(bundle, phi)?;
    let n_nodes = bundle.grid().n_steps() + 1;
    let eval = |incs: &Increments| -> Result<Vec<f64>> {
        let mut out = vec![0.0; incs.n_paths() * n_nodes];
        out.par_chunks_mut(n_nodes)
            .enumerate()
            .try_for_each(|(p, row)| f.eval_process(incs.path(p), row))?;
        Ok(out)
    };
    Ok(TransferredProcess { n_nodes, base: eval(bundle.w())?, coupled: eval(&coupled_paths)? })
}

/// `h` together with the coupled batch on which `h^phi` is evaluated.
pub struct TransferredCoefficient<'a> {
    h: PathFunctional,
    base: &'a Increments,
    coupled: Increments,
}

impl<'a> TransferredCoefficient<'a> {
    pub fn eval_base(&self, path: usize, node: usize, x: &[f64]) -> f64 {
        self.h.eval_coefficient(self.base.path(path), node, x).expect("arity checked")
    }

    /// `h^phi(u_k, x)` on sample `path`.
    pub fn eval(&self, path: usize, node: usize, x: &[f64]) -> f64 {
        self.h.eval_coefficient(self.coupled.path(path), node, x).expect("arity checked")
    }

    pub fn lipschitz(&self) -> f64 {
        self.h.lipschitz().unwrap_or(f64::INFINITY)
    }

    pub fn coupled_paths(&self) -> &Increments {
        &self.coupled
    }
}

pub fn transfer_coefficient<'a>(
    h: &PathFunctional,
    bundle: &'a PathBundle,
    phi: &CouplingFunction,
) -> Result<TransferredCoefficient<'a>> {
    h.expect(Arity::Coefficient)?;
    Ok(TransferredCoefficient { h: h.clone(), base: bundle.w(), coupled: build_coupled_path(bundle, phi)? })
}

/// `G^c_a = sigma(W on [0, a]) v sigma(W - W_c on [c, T])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaAlgebraWindow {
    pub a: f64,
    pub c: f64,
}

impl SigmaAlgebraWindow {
    pub fn new(a: f64, c: f64) -> Result<Self> {
        if !(a < c) {
            return Err(Error::config(format!("window needs a < c, got ({a}, {c}]")));
        }
        Ok(SigmaAlgebraWindow { a, c })
    }

    /// Cell range `ka..kc` whose increments are not `G^c_a`-measurable.
    pub fn cells(&self, grid: &TimeGrid) -> Result<(usize, usize)> {
        if self.a < grid.t_start() || self.c > grid.t_end() || !(self.a < self.c) {
            return Err(Error::config(format!(
                "window ({}, {}] not inside [{}, {}]",
                self.a,
                self.c,
                grid.t_start(),
                grid.t_end()
            )));
        }
        Ok((grid.require_node(self.a)?, grid.require_node(self.c)?))
    }

    pub fn indicator(&self) -> CouplingFunction {
        CouplingFunction::indicator(self.a, self.c)
    }
}

/// Nested Monte Carlo estimate of `E[xi | G^c_a]` on every outer path:
/// increments outside `(a, c]` are frozen and the inside ones are redrawn
/// `n_inner` times from the inner lane of the bundle's stream.
pub fn conditional_expectation_window(
    f: &PathFunctional,
    bundle: &PathBundle,
    window: &SigmaAlgebraWindow,
    n_inner: usize,
) -> Result<Vec<f64>> {
    f.expect(Arity::Scalar)?;
    if n_inner == 0 {
        return Err(Error::config("n_inner must be at least 1"));
    }
    let grid = bundle.grid();
    let (ka, kc) = window.cells(grid)?;
    let d = bundle.dim();
    let scale = grid.step().sqrt();
    let (seed, stream) = (bundle.seed(), bundle.stream_id());
    let w = bundle.w();
    (0..bundle.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut incs = w.path(p).increments().to_vec();
            let mut rng = stream_rng(seed, stream, Lane::Inner, p as u64, 0);
            let mut first = None;
            let mut all_equal = true;
            let mut sum = 0.0;
            for _ in 0..n_inner {
                for x in &mut incs[ka * d..kc * d] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = scale * z;
                }
                let v = f.eval_scalar(PathView::new(grid, d, &incs))?;
                match first {
                    None => first = Some(v),
                    Some(v0) => all_equal &= v == v0,
                }
                sum += v;
            }
            // G-measurable functionals come back unchanged
            Ok(if all_equal { first.unwrap() } else { sum / n_inner as f64 })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichReport {
    pub p: f64,
    pub window: SigmaAlgebraWindow,
    /// `2^{-p} E|xi - xi^phi|^p`
    pub lhs: Estimate,
    /// `E|xi - E[xi | G^c_a]|^p`
    pub mid: Estimate,
    /// `E|xi - xi^phi|^p`
    pub rhs: Estimate,
    /// Standard-error multiplier used for the inequality checks.
    pub confidence: f64,
    pub pass: bool,
}

/// Confidence multiplier for the sandwich inequalities.
pub const SANDWICH_CONFIDENCE: f64 = 3.0;

pub fn sandwich_check(
    f: &PathFunctional,
    bundle: &PathBundle,
    window: &SigmaAlgebraWindow,
    p: f64,
    n_inner: usize,
) -> Result<SandwichReport> {
    if !(p >= 1.0) {
        return Err(Error::config(format!("sandwich exponent must be >= 1, got {p}")));
    }
    let transferred = transfer_variable(f, bundle, &window.indicator())?;
    let cond = conditional_expectation_window(f, bundle, window, n_inner)?;
    let rhs = transferred.gap_moment(p);
    let lhs = rhs.scale(2f64.powf(-p));
    let resid: Vec<f64> = transferred.base.iter().zip(&cond).map(|(x, e)| pow_abs(x - e, p)).collect();
    let mid = Estimate::from_samples(&resid);
    let k = SANDWICH_CONFIDENCE;
    let le = |a: &Estimate, b: &Estimate| a.mean <= b.mean + k * a.std_err.hypot(b.std_err);
    let pass = le(&lhs, &mid) && le(&mid, &rhs);
    Ok(SandwichReport { p, window: *window, lhs, mid, rhs, confidence: k, pass })
}
