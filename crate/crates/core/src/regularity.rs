//! Time-regularity studies, the `D_{1,2}` ratio test and the fractional
//! potential checker.
//!
//! An MC estimate of a supremum is always finite, so "bounded" is read as
//! two observable facts: the sup over the `r`-grid is stable when the sample
//! is doubled, and the ratio curve does not blow up at small `r` (log-log
//! slope over the three smallest `r` at least [`DIVERGENCE_SLOPE`]).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coupling::{transfer_process, transfer_variable};
use crate::error::{Error, Result};
use crate::functional::{Arity, PathFunctional};
use crate::grid::{CouplingFunction, TimeGrid};
use crate::model::FbsdeSpec;
use crate::paths::{sample_paths, PathBundle};
use crate::rng::{stream_rng, Lane};
use crate::solver::{solve_on_window, SolutionTriple, SolverConfig, Terminal};
use crate::stats::{loglog_slope, norm_sq, pow_abs, pow_half, Estimate};
use crate::variance::{estimate_cv_with_base, estimate_potentials, VarianceReport};

pub const DEFAULT_R_GRID: [f64; 7] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];

/// Standard errors allowed between the sup at `n` and at `2n` paths.
pub const STABILITY_SE: f64 = 3.0;

/// Small-`r` log-log slope below which a ratio curve counts as diverging.
pub const DIVERGENCE_SLOPE: f64 = -0.5;

/// How a study draws its batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub stream_id: u64,
}

impl Sampling {
    pub fn bundle(&self) -> Result<PathBundle> {
        sample_paths(&self.grid, self.dim, self.n_paths, self.seed, self.stream_id)
    }

    pub fn doubled(&self) -> Self {
        Sampling { n_paths: 2 * self.n_paths, ..*self }
    }
}

fn check_r_grid(r_grid: &[f64]) -> Result<()> {
    if r_grid.is_empty() {
        return Err(Error::config("empty r-grid"));
    }
    if let Some(r) = r_grid.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::Domain(format!("r = {r} outside (0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub r: f64,
    pub ratio: Estimate,
}

/// Doubling stability and small-`r` behavior of a ratio curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupStability {
    pub sup: Estimate,
    pub sup_doubled: Estimate,
    pub stable: bool,
    /// Log-log slope over the three smallest `r`; `None` if the curve vanishes there.
    pub small_r_slope: Option<f64>,
    pub bounded: bool,
}

fn curve_sup(curve: &[RatioPoint]) -> Estimate {
    curve.iter().map(|p| p.ratio).fold(Estimate::ZERO, |a, b| if b.mean > a.mean { b } else { a })
}

fn small_r_slope(curve: &[RatioPoint]) -> Option<f64> {
    let mut pts: Vec<&RatioPoint> = curve.iter().collect();
    pts.sort_by(|a, b| a.r.total_cmp(&b.r));
    let head = &pts[..pts.len().min(3)];
    let rs: Vec<f64> = head.iter().map(|p| p.r).collect();
    let vs: Vec<f64> = head.iter().map(|p| p.ratio.mean).collect();
    loglog_slope(&rs, &vs)
}

fn stability(curve: &[RatioPoint], doubled: &[RatioPoint]) -> SupStability {
    let (sup, sup_doubled) = (curve_sup(curve), curve_sup(doubled));
    let stable = (sup.mean - sup_doubled.mean).abs() <= STABILITY_SE * sup.std_err.hypot(sup_doubled.std_err);
    let slope = small_r_slope(doubled);
    let bounded = stable && sup.mean.is_finite() && slope.map_or(true, |s| s >= DIVERGENCE_SLOPE);
    SupStability { sup, sup_doubled, stable, small_r_slope: slope, bounded }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeComponent {
    X,
    Y,
}

/// What the `D_{1,2}` test transfers.
#[derive(Clone)]
pub enum MalliavinTarget<'a> {
    Functional(&'a PathFunctional),
    /// `X_s` or `Y_s` of an FBSDE solved on the whole sampling grid.
    Node { spec: &'a FbsdeSpec, time: f64, component: NodeComponent, cfg: SolverConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalliavinReport {
    pub target: String,
    pub n_paths: usize,
    /// `E|xi - xi^{phi_r}|^2 / r^2` on the `r`-grid.
    pub curve: Vec<RatioPoint>,
    pub curve_doubled: Vec<RatioPoint>,
    pub stability: SupStability,
    /// For FBSDE targets: `sup_r (E|g^{phi_r}(X_T) - g(X_T)|^2 + E U_2) / r^2`,
    /// reported without a threshold.
    pub hypothesis_m: Option<f64>,
}

fn check_square_integrable(name: &str, xs: &[f64]) -> Result<()> {
    if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
        return Err(Error::Diagnostic(format!("{name}: non-finite sample {bad}")));
    }
    let m2 = Estimate::from_samples(&xs.iter().map(|x| x * x).collect::<Vec<_>>());
    if !m2.mean.is_finite() || !m2.std_err.is_finite() {
        return Err(Error::Diagnostic(format!("{name}: second moment is not finite")));
    }
    Ok(())
}

fn functional_curve(f: &PathFunctional, bundle: &PathBundle, r_grid: &[f64]) -> Result<Vec<RatioPoint>> {
    let mut out = Vec::with_capacity(r_grid.len());
    for (i, &r) in r_grid.iter().enumerate() {
        let t = transfer_variable(f, bundle, &CouplingFunction::constant(r))?;
        if i == 0 {
            check_square_integrable(f.name(), &t.base)?;
        }
        out.push(RatioPoint { r, ratio: t.gap_moment(2.0).scale(1.0 / (r * r)) });
    }
    Ok(out)
}

fn base_solve(spec: &FbsdeSpec, bundle: &PathBundle, cfg: &SolverConfig) -> Result<SolutionTriple> {
    let n = bundle.grid().n_steps();
    solve_on_window(spec, bundle.w(), 0, n, &spec.initial, Terminal::Spec, cfg)
}

fn node_curve(
    spec: &FbsdeSpec,
    time: f64,
    component: NodeComponent,
    cfg: &SolverConfig,
    bundle: &PathBundle,
    r_grid: &[f64],
) -> Result<(Vec<RatioPoint>, f64)> {
    let base = base_solve(spec, bundle, cfg)?;
    let k = base.grid().require_node(time)?;
    let pick = |s: &SolutionTriple, q: usize| -> Vec<f64> {
        match component {
            NodeComponent::X => s.x(k, q).to_vec(),
            NodeComponent::Y => s.y(k, q).to_vec(),
        }
    };
    let mut curve = Vec::with_capacity(r_grid.len());
    let mut m_hat: f64 = 0.0;
    let horizon = (base.grid().t_start(), base.grid().t_end());
    for &r in r_grid {
        let phi = CouplingFunction::constant(r);
        let cells = phi.cell_values(bundle.grid())?;
        let coupled = crate::paths::couple_increments(bundle.w(), bundle.w_prime(), &cells);
        let twin = solve_on_window(spec, &coupled, 0, base.n_steps(), &spec.initial, Terminal::Spec, cfg)?;
        let gaps: Vec<f64> = (0..base.n_paths())
            .map(|q| {
                let (a, b) = (pick(&base, q), pick(&twin, q));
                norm_sq(&a.iter().zip(&b).map(|(u, v)| u - v).collect::<Vec<_>>())
            })
            .collect();
        curve.push(RatioPoint { r, ratio: Estimate::from_samples(&gaps).scale(1.0 / (r * r)) });
        let pot = estimate_potentials(spec, &phi, horizon, 2.0, bundle, &base)?;
        m_hat = m_hat.max((pot.terminal_gap.mean + pot.u_p.mean) / (r * r));
    }
    Ok((curve, m_hat))
}

/// Ratio curve `r -> E|xi - xi^{phi_r}|^2 / r^2` at `sampling.n_paths` and
/// at twice that, with the boundedness verdict.
pub fn run_malliavin_test(target: &MalliavinTarget<'_>, r_grid: &[f64], sampling: &Sampling) -> Result<MalliavinReport> {
    check_r_grid(r_grid)?;
    let run = |s: &Sampling| -> Result<(Vec<RatioPoint>, Option<f64>)> {
        let bundle = s.bundle()?;
        match target {
            MalliavinTarget::Functional(f) => Ok((functional_curve(f, &bundle, r_grid)?, None)),
            MalliavinTarget::Node { spec, time, component, cfg } => {
                let (c, m) = node_curve(spec, *time, *component, cfg, &bundle, r_grid)?;
                Ok((c, Some(m)))
            }
        }
    };
    let (curve, hypothesis_m) = run(sampling)?;
    let (curve_doubled, _) = run(&sampling.doubled())?;
    let name = match target {
        MalliavinTarget::Functional(f) => f.name().to_string(),
        MalliavinTarget::Node { spec, time, component, .. } => format!("{}:{component:?}_{time}", spec.name),
    };
    let stability = stability(&curve, &curve_doubled);
    Ok(MalliavinReport { target: name, n_paths: sampling.n_paths, curve, curve_doubled, stability, hypothesis_m })
}

/// Closed-form curve for `xi = W_T`: `2 T (1 - sqrt(1 - r^2)) / r^2`.
pub fn brownian_terminal_ratio(r: f64, horizon: f64) -> f64 {
    // 1 - sqrt(1 - r^2) = r^2 / (1 + sqrt(1 - r^2))
    2.0 * horizon / (1.0 + (1.0 - r * r).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityRow {
    pub s: f64,
    pub r: f64,
    /// `E|X_s - X_r|^p`.
    pub x_gap: Estimate,
    pub y_gap: Estimate,
    /// `E (int_s^r |Z|^2)^{p/2}`.
    pub z_energy: Estimate,
    /// Coupling variance over the whole window with `phi = 1_{(s, r]}`;
    /// `None` for a degenerate pair.
    pub cv: Option<VarianceReport>,
    /// `z_energy <= CV_p` within [`STABILITY_SE`] standard errors.
    pub z_within_cv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRegularityReport {
    pub p: f64,
    pub rows: Vec<RegularityRow>,
    /// Log-log slope of `E|Y_r - Y_s|^p` against `r - s`.
    pub y_slope: Option<f64>,
    pub pass: bool,
}

/// Increment moments of the solution on `bundle`'s whole grid over the
/// given `(s, r)` pairs, each checked against the coupling variance.
pub fn run_path_regularity(
    spec: &FbsdeSpec,
    bundle: &PathBundle,
    pairs: &[(f64, f64)],
    p: f64,
    cfg: &SolverConfig,
) -> Result<PathRegularityReport> {
    if !(p >= 2.0) {
        return Err(Error::UnsupportedExponent(p));
    }
    let base = base_solve(spec, bundle, cfg)?;
    let grid = *base.grid();
    let horizon = (grid.t_start(), grid.t_end());
    let dt = grid.step();
    let mut rows = Vec::with_capacity(pairs.len());
    for &(s, r) in pairs {
        if s > r {
            return Err(Error::config(format!("pair ({s}, {r}) has s > r")));
        }
        let (ks, kr) = (grid.require_node(s)?, grid.require_node(r)?);
        if ks == kr {
            rows.push(RegularityRow {
                s,
                r,
                x_gap: Estimate::ZERO,
                y_gap: Estimate::ZERO,
                z_energy: Estimate::ZERO,
                cv: None,
                z_within_cv: true,
            });
            continue;
        }
        let np = base.n_paths();
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        let xs: Vec<f64> = (0..np).map(|q| pow_half(diff(base.x(ks, q), base.x(kr, q)), p)).collect();
        let ys: Vec<f64> = (0..np).map(|q| pow_half(diff(base.y(ks, q), base.y(kr, q)), p)).collect();
        let zs: Vec<f64> = (0..np)
            .map(|q| pow_half((ks + 1..=kr).map(|k| norm_sq(base.z(k, q)) * dt).sum(), p))
            .collect();
        let z_energy = Estimate::from_samples(&zs);
        let cv = estimate_cv_with_base(spec, &CouplingFunction::indicator(s, r), horizon, p, bundle, cfg, &base)?;
        let z_within_cv = z_energy.mean <= cv.cv.mean + STABILITY_SE * z_energy.std_err.hypot(cv.cv.std_err);
        rows.push(RegularityRow {
            s,
            r,
            x_gap: Estimate::from_samples(&xs),
            y_gap: Estimate::from_samples(&ys),
            z_energy,
            cv: Some(cv),
            z_within_cv,
        });
    }
    let (lens, ys): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|row| row.r > row.s).map(|row| (row.r - row.s, row.y_gap.mean)).unzip();
    let y_slope = loglog_slope(&lens, &ys);
    let pass = rows.iter().all(|row| row.z_within_cv);
    Ok(PathRegularityReport { p, rows, y_slope, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSlot {
    B,
    Mu,
    F,
    G,
}

/// Declared behavior of a rate function `R_i(theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RateDecl {
    Lipschitz { constant: f64, z_dependent: bool },
    Bounded { bound: f64 },
}

pub type RateFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct FracEntry {
    pub slot: CoefficientSlot,
    /// Process driver for `b`, `mu`, `f`; scalar (terminal) driver for `g`.
    pub driver: PathFunctional,
    pub decl: RateDecl,
    /// Optional implementation of `R_i` on flattened `theta`, sample-checked
    /// against a declared bound.
    pub rate: Option<Arc<RateFn>>,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FracCase {
    I,
    II,
}

#[derive(Clone)]
pub struct FractionalPotentialSpec {
    pub case: FracCase,
    pub p: f64,
    /// Length of the flattened `theta` handed to rate functions.
    pub theta_len: usize,
    pub entries: Vec<FracEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FracVerdict {
    Holds,
    HoldsTrivially,
    Fails,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FracEntryReport {
    pub slot: CoefficientSlot,
    pub driver: String,
    pub beta: f64,
    /// `sup_u` of the ratio at each `r`.
    pub curve: Vec<RatioPoint>,
    pub curve_doubled: Vec<RatioPoint>,
    pub stability: SupStability,
    pub verdict: FracVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FracReport {
    pub case: FracCase,
    pub p: f64,
    pub entries: Vec<FracEntryReport>,
    pub verdict: FracVerdict,
}

const RATE_SAMPLES: usize = 2048;
const RATE_SCALE: f64 = 10.0;
const MAX_TIME_POINTS: usize = 8;

fn validate_frac(spec: &FractionalPotentialSpec) -> Result<()> {
    match spec.case {
        FracCase::I if !(spec.p > 2.0) => return Err(Error::config(format!("Case I needs p > 2, got {}", spec.p))),
        FracCase::II if !(spec.p >= 2.0) => return Err(Error::config(format!("Case II needs p >= 2, got {}", spec.p))),
        _ => {}
    }
    for (i, e) in spec.entries.iter().enumerate() {
        let want = if e.slot == CoefficientSlot::G { Arity::Scalar } else { Arity::Process };
        if e.driver.arity() != want {
            return Err(Error::config(format!("entry {i} ({:?}) needs a {want:?} driver", e.slot)));
        }
        if !(e.beta > 0.0) {
            return Err(Error::config(format!("entry {i}: beta must be positive, got {}", e.beta)));
        }
        match (spec.case, e.decl) {
            (FracCase::I, RateDecl::Lipschitz { z_dependent: true, .. }) => {
                return Err(Error::config(format!("entry {i}: Case I rejects a z-dependent rate")));
            }
            (FracCase::I, RateDecl::Lipschitz { .. }) => {}
            (FracCase::I, RateDecl::Bounded { .. }) => {
                return Err(Error::config(format!("entry {i}: Case I needs a Lipschitz rate declaration")));
            }
            (FracCase::II, RateDecl::Bounded { bound }) => {
                if let Some(rate) = &e.rate {
                    check_rate_bound(rate.as_ref(), spec.theta_len.max(1), bound, i)?;
                }
            }
            (FracCase::II, RateDecl::Lipschitz { .. }) => {
                return Err(Error::config(format!("entry {i}: Case II needs a bounded rate declaration")));
            }
        }
    }
    Ok(())
}

fn check_rate_bound(rate: &RateFn, theta_len: usize, bound: f64, entry: usize) -> Result<()> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = stream_rng(0x5a7e, entry as u64, Lane::Auxiliary, 0, 0);
    let mut theta = vec![0.0; theta_len];
    for _ in 0..RATE_SAMPLES {
        for t in theta.iter_mut() {
            *t = RATE_SCALE * rng.sample::<f64, _>(StandardNormal);
        }
        let v = rate(&theta);
        if !(v.abs() <= bound) {
            return Err(Error::config(format!("entry {entry}: rate value {v} exceeds the declared bound {bound}")));
        }
    }
    Ok(())
}

fn frac_curve(spec: &FractionalPotentialSpec, e: &FracEntry, bundle: &PathBundle, r_grid: &[f64]) -> Result<Vec<RatioPoint>> {
    let (moment, outer) = match spec.case {
        FracCase::II => (2.0 * e.beta, 1.0),
        FracCase::I => (2.0 * e.beta * spec.p / (spec.p - 2.0), (spec.p - 2.0) / spec.p),
    };
    let ratio_of = |base: &[f64], coupled: &[f64], r: f64| -> Estimate {
        let gaps: Vec<f64> = base.iter().zip(coupled).map(|(a, b)| pow_abs(a - b, moment)).collect();
        let m = Estimate::from_samples(&gaps);
        // delta method for the outer power
        let mean = m.mean.powf(outer);
        let se = if m.mean > 0.0 { outer * m.mean.powf(outer - 1.0) * m.std_err } else { 0.0 };
        Estimate { mean: mean / (r * r), std_err: se / (r * r) }
    };
    let n = bundle.grid().n_steps();
    let stride = n.div_ceil(MAX_TIME_POINTS).max(1);
    let mut curve = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let phi = CouplingFunction::constant(r);
        let best = if e.slot == CoefficientSlot::G {
            let t = transfer_variable(&e.driver, bundle, &phi)?;
            ratio_of(&t.base, &t.coupled, r)
        } else {
            let t = transfer_process(&e.driver, bundle, &phi)?;
            let mut nodes: Vec<usize> = (stride..=n).step_by(stride).collect();
            if nodes.last() != Some(&n) {
                nodes.push(n);
            }
            nodes
                .into_iter()
                .map(|k| ratio_of(&t.base_at(k), &t.coupled_at(k), r))
                .fold(Estimate::ZERO, |a, b| if b.mean > a.mean { b } else { a })
        };
        curve.push(RatioPoint { r, ratio: best });
    }
    Ok(curve)
}

/// Check the fractional potential condition of every entry on the `r`-grid.
pub fn run_fracpot_check(spec: &FractionalPotentialSpec, r_grid: &[f64], sampling: &Sampling) -> Result<FracReport> {
    check_r_grid(r_grid)?;
    validate_frac(spec)?;
    if spec.entries.is_empty() {
        return Err(Error::config("fractional potential spec has no entries"));
    }
    let bundle = sampling.bundle()?;
    let doubled = sampling.doubled().bundle()?;
    let mut entries = Vec::with_capacity(spec.entries.len());
    for e in &spec.entries {
        let curve = frac_curve(spec, e, &bundle, r_grid)?;
        let curve_doubled = frac_curve(spec, e, &doubled, r_grid)?;
        let stability = stability(&curve, &curve_doubled);
        let trivial = curve.iter().chain(&curve_doubled).all(|p| p.ratio.mean == 0.0);
        let verdict = if trivial {
            FracVerdict::HoldsTrivially
        } else if stability.bounded {
            FracVerdict::Holds
        } else {
            FracVerdict::Fails
        };
        entries.push(FracEntryReport {
            slot: e.slot,
            driver: e.driver.name().to_string(),
            beta: e.beta,
            curve,
            curve_doubled,
            stability,
            verdict,
        });
    }
    let verdict = if entries.iter().any(|e| e.verdict == FracVerdict::Fails) {
        FracVerdict::Fails
    } else if entries.iter().all(|e| e.verdict == FracVerdict::HoldsTrivially) {
        FracVerdict::HoldsTrivially
    } else {
        FracVerdict::Holds
    };
    Ok(FracReport { case: spec.case, p: spec.p, entries, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::library;
    use crate::model::LinearCoefficients;

    fn sampling(n_steps: usize, n_paths: usize) -> Sampling {
        Sampling { grid: TimeGrid::unit(1.0, n_steps).unwrap(), dim: 1, n_paths, seed: 11, stream_id: 0 }
    }

    #[test]
    fn closed_form_curve() {
        assert!((brownian_terminal_ratio(0.1, 1.0) - 1.002_512_6).abs() < 1e-7);
        assert_eq!(brownian_terminal_ratio(1.0, 1.0), 2.0);
        assert!((brownian_terminal_ratio(1e-6, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_functional_has_zero_curve() {
        let f = library::constant(3.0);
        let rep = run_malliavin_test(&MalliavinTarget::Functional(&f), &DEFAULT_R_GRID, &sampling(4, 500)).unwrap();
        assert!(rep.curve.iter().all(|p| p.ratio == Estimate::ZERO));
        assert!(rep.stability.bounded);
    }

    #[test]
    fn discontinuous_functional_is_unbounded() {
        let f = PathFunctional::scalar("1{W_T > 0}", |p| if p.terminal(0) > 0.0 { 1.0 } else { 0.0 });
        let rep = run_malliavin_test(&MalliavinTarget::Functional(&f), &DEFAULT_R_GRID, &sampling(4, 20_000)).unwrap();
        assert!(!rep.stability.bounded, "{:?}", rep.stability);
        assert!(rep.stability.small_r_slope.unwrap() < -0.8);
    }

    #[test]
    fn rejects_bad_r_grid() {
        let f = library::terminal_value(0);
        for grid in [&[][..], &[0.0, 0.5][..], &[1.5][..]] {
            assert!(run_malliavin_test(&MalliavinTarget::Functional(&f), grid, &sampling(4, 10)).is_err());
        }
    }

    #[test]
    fn node_target_matches_brownian_curve() {
        // X = W for the martingale oracle, so X_1 carries the W_1 curve
        let spec = LinearCoefficients::martingale().into_spec(0.0).unwrap();
        let target = MalliavinTarget::Node { spec: &spec, time: 1.0, component: NodeComponent::X, cfg: SolverConfig::default() };
        let rep = run_malliavin_test(&target, &[0.1, 0.5, 1.0], &sampling(8, 4000)).unwrap();
        for p in &rep.curve {
            let want = brownian_terminal_ratio(p.r, 1.0);
            assert!((p.ratio.mean - want).abs() < 0.1 * want, "{p:?}");
        }
        assert_eq!(rep.hypothesis_m, Some(0.0));
    }

    fn entry(driver: PathFunctional, decl: RateDecl, beta: f64) -> FracEntry {
        FracEntry { slot: CoefficientSlot::B, driver, decl, rate: None, beta }
    }

    #[test]
    fn case_declarations_are_enforced() {
        let lip_z = RateDecl::Lipschitz { constant: 1.0, z_dependent: true };
        let spec = FractionalPotentialSpec {
            case: FracCase::I,
            p: 4.0,
            theta_len: 3,
            entries: vec![entry(library::brownian_process(0), lip_z, 1.0)],
        };
        assert!(matches!(run_fracpot_check(&spec, &DEFAULT_R_GRID, &sampling(4, 10)), Err(Error::Config(_))));
        let lip = RateDecl::Lipschitz { constant: 1.0, z_dependent: false };
        let low_p = FractionalPotentialSpec { p: 2.0, entries: vec![entry(library::brownian_process(0), lip, 1.0)], ..spec.clone() };
        assert!(matches!(run_fracpot_check(&low_p, &DEFAULT_R_GRID, &sampling(4, 10)), Err(Error::Config(_))));
        let mut bounded = entry(library::brownian_process(0), RateDecl::Bounded { bound: 1.0 }, 1.0);
        bounded.rate = Some(Arc::new(|t: &[f64]| t[0].abs()));
        let liar = FractionalPotentialSpec { case: FracCase::II, p: 2.0, theta_len: 3, entries: vec![bounded] };
        assert!(matches!(run_fracpot_check(&liar, &DEFAULT_R_GRID, &sampling(4, 10)), Err(Error::Config(_))));
        let scalar_for_b = FractionalPotentialSpec {
            case: FracCase::II,
            p: 2.0,
            theta_len: 3,
            entries: vec![entry(library::terminal_value(0), RateDecl::Bounded { bound: 1.0 }, 1.0)],
        };
        assert!(matches!(run_fracpot_check(&scalar_for_b, &DEFAULT_R_GRID, &sampling(4, 10)), Err(Error::Config(_))));
    }

    #[test]
    fn case_one_brownian_driver_holds() {
        let lip = RateDecl::Lipschitz { constant: 1.0, z_dependent: false };
        let spec = FractionalPotentialSpec {
            case: FracCase::I,
            p: 4.0,
            theta_len: 3,
            entries: vec![entry(library::brownian_process(0), lip, 1.0)],
        };
        let rep = run_fracpot_check(&spec, &DEFAULT_R_GRID, &sampling(16, 20_000)).unwrap();
        assert_eq!(rep.verdict, FracVerdict::Holds, "{:?}", rep.entries[0].stability);
        // (E|dW|^4)^{1/2} / r^2 -> sqrt(3) u at small r
        let small = rep.entries[0].curve[0].ratio.mean;
        assert!((small - 3f64.sqrt()).abs() < 0.1, "{small}");
    }
}
