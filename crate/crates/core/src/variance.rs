//! The `p`-coupling variance of a solved FBSDE and the terms that bound it.
//!
//! The coupled triple is obtained by solving the same FBSDE against `W^phi`
//! with the coefficients re-evaluated on the coupled path, on the same bundle
//! as the base solve. With `phi == 0` the coupled driver is a bitwise copy of
//! `W` and every gap is exactly zero.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{retained_weight, CouplingFunction, TimeGrid};
use crate::model::{Ctx, Dims, FbsdeSpec};
use crate::paths::{couple_increments, Increments, PathBundle};
use crate::solvability::check_solvability;
use crate::solver::{apriori_check, solve_on_window, zero_function_rows, window_of, SolutionTriple, SolverConfig, Terminal};
use crate::stats::{norm_sq, pow_abs, pow_half, stable_mean, Estimate};

/// Default admissible spread of fitted bound constants.
pub const DEFAULT_SPREAD_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub p: f64,
    pub interval: (f64, f64),
    pub phi: CouplingFunction,
    /// `E sup |X - X^phi|^p` over the interval nodes.
    pub sup_x: Estimate,
    pub sup_y: Estimate,
    /// `E (int |Z - Z^phi|^2)^{p/2}`.
    pub z_gap: Estimate,
    /// `E (int (1 - sqrt(1 - phi^2)) |Z|^2)^{p/2}`.
    pub z_energy: Estimate,
    pub cv: Estimate,
    /// `E U_p` along the base solution.
    pub u_p: Estimate,
    pub s_p: f64,
    /// `I_{p,b}`, `I_{p,f}`, `I_{p,mu}` over the interval.
    pub i_b: f64,
    pub i_f: f64,
    pub i_mu: f64,
    /// `I_{p,T}` over the whole solve window.
    pub i_t: f64,
    pub p_p: f64,
    /// `E |xi - xi^phi|^p`.
    pub xi_gap: Estimate,
    /// `E |g(X_T) - g^phi(X_T)|^p`.
    pub terminal_gap: Estimate,
    /// Sum of the gap terms, `U_p` and `S_p`.
    pub bound_terms: f64,
    /// `cv / bound_terms`; `None` when the denominator vanishes.
    pub ratio: Option<f64>,
    /// Nonzero `cv` against vanishing bound terms.
    pub violation: bool,
}

/// Coefficient-side terms evaluated along a base solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potentials {
    pub u_p: Estimate,
    pub s_p: f64,
    pub i_b: f64,
    pub i_f: f64,
    pub i_mu: f64,
    pub i_t: f64,
    pub terminal_gap: Estimate,
    pub p_p: f64,
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::UnsupportedExponent(p));
    }
    Ok(())
}

/// Local node range of `interval` inside the solution grid.
fn interval_nodes(grid: &TimeGrid, interval: (f64, f64)) -> Result<(usize, usize)> {
    let (t1, t2) = interval;
    if !(t1 < t2) {
        return Err(Error::config(format!("interval needs t1 < t2, got [{t1}, {t2}]")));
    }
    Ok((grid.require_node(t1)?, grid.require_node(t2)?))
}

fn check_solution(sol: &SolutionTriple, bundle: &PathBundle, spec: &FbsdeSpec) -> Result<()> {
    if sol.n_paths() != bundle.n_paths() || sol.dims() != spec.dims || bundle.dim() != spec.dims.d {
        return Err(Error::Dimension("solution, bundle and spec do not match".into()));
    }
    Ok(())
}

/// Solve on `horizon` (a node window of the bundle grid) against `W` and
/// against `W^phi`, then measure the four coupling-variance components over
/// `interval`.
pub fn estimate_cv(
    spec: &FbsdeSpec,
    phi: &CouplingFunction,
    horizon: &TimeGrid,
    interval: (f64, f64),
    p: f64,
    bundle: &PathBundle,
    cfg: &SolverConfig,
) -> Result<VarianceReport> {
    check_p(p)?;
    let verdict = check_solvability(spec, 2.0, None)?;
    if !verdict.pass {
        return Err(Error::NotSolvable(format!("L_g * L_mu3 = {:.4} is not below 1", verdict.product)));
    }
    let (k0, k1) = window_of(bundle.grid(), horizon)?;
    let cells = phi.cell_values(bundle.grid())?;
    let coupled = couple_increments(bundle.w(), bundle.w_prime(), &cells);
    let (base, twin) = rayon::join(
        || solve_on_window(spec, bundle.w(), k0, k1, &spec.initial, Terminal::Spec, cfg),
        || solve_on_window(spec, &coupled, k0, k1, &spec.initial, Terminal::Spec, cfg),
    );
    let base = base.map_err(|e| Error::Diagnostic(format!("base solve failed: {e}")))?;
    let twin = twin.map_err(|e| Error::Diagnostic(format!("coupled solve failed: {e}")))?;
    assemble(spec, phi, interval, p, bundle, &coupled, &cells, &base, &twin)
}

/// As [`estimate_cv`], reusing a base solution (driven by `W` on a node
/// window of the bundle grid) across several `phi`.
pub fn estimate_cv_with_base(
    spec: &FbsdeSpec,
    phi: &CouplingFunction,
    interval: (f64, f64),
    p: f64,
    bundle: &PathBundle,
    cfg: &SolverConfig,
    base: &SolutionTriple,
) -> Result<VarianceReport> {
    check_p(p)?;
    check_solution(base, bundle, spec)?;
    let k0 = base.start_node();
    let cells = phi.cell_values(bundle.grid())?;
    let coupled = couple_increments(bundle.w(), bundle.w_prime(), &cells);
    let twin = solve_on_window(spec, &coupled, k0, k0 + base.n_steps(), &spec.initial, Terminal::Spec, cfg)
        .map_err(|e| Error::Diagnostic(format!("coupled solve failed: {e}")))?;
    assemble(spec, phi, interval, p, bundle, &coupled, &cells, base, &twin)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    spec: &FbsdeSpec,
    phi: &CouplingFunction,
    interval: (f64, f64),
    p: f64,
    bundle: &PathBundle,
    coupled: &Increments,
    cells: &[f64],
    base: &SolutionTriple,
    twin: &SolutionTriple,
) -> Result<VarianceReport> {
    let (a, c) = interval_nodes(base.grid(), interval)?;
    let (dt, k0) = (base.grid().step(), base.start_node());
    let rows: Vec<[f64; 5]> = (0..base.n_paths())
        .into_par_iter()
        .map(|q| {
            let (mut sx, mut sy, mut zg, mut ze) = (0.0f64, 0.0f64, 0.0, 0.0);
            for k in a..=c {
                sx = sx.max(norm_sq_diff(base.x(k, q), twin.x(k, q)));
                sy = sy.max(norm_sq_diff(base.y(k, q), twin.y(k, q)));
            }
            for k in a + 1..=c {
                let ph = cells[k0 + k - 1];
                zg += norm_sq_diff(base.z(k, q), twin.z(k, q)) * dt;
                if ph != 0.0 {
                    ze += (1.0 - retained_weight(ph)) * norm_sq(base.z(k, q)) * dt;
                }
            }
            let xi = norm_sq_diff(base.x(0, q), twin.x(0, q));
            [pow_half(sx, p), pow_half(sy, p), pow_half(zg, p), pow_half(ze, p), pow_half(xi, p)]
        })
        .collect();
    let col = |i: usize| Estimate::from_samples(&rows.iter().map(|r| r[i]).collect::<Vec<_>>());
    let (sup_x, sup_y, z_gap, z_energy, xi_gap) = (col(0), col(1), col(2), col(3), col(4));
    let cv = Estimate::from_samples(&rows.iter().map(|r| r[0] + r[1] + r[2] + r[3]).collect::<Vec<_>>());
    let pot = potentials_with(spec, cells, interval, p, bundle, coupled, base)?;
    let bound_terms = xi_gap.mean + pot.terminal_gap.mean + pot.u_p.mean + pot.s_p;
    if spec.is_deterministic() {
        // gap and potential terms vanish; the bound side reduces to S_p
        debug_assert!(bound_terms == pot.s_p);
    }
    let ratio = (bound_terms > 0.0).then(|| cv.mean / bound_terms);
    Ok(VarianceReport {
        p,
        interval,
        phi: phi.clone(),
        sup_x,
        sup_y,
        z_gap,
        z_energy,
        cv,
        u_p: pot.u_p,
        s_p: pot.s_p,
        i_b: pot.i_b,
        i_f: pot.i_f,
        i_mu: pot.i_mu,
        i_t: pot.i_t,
        p_p: pot.p_p,
        xi_gap,
        terminal_gap: pot.terminal_gap,
        bound_terms,
        ratio,
        violation: bound_terms == 0.0 && cv.mean > 0.0,
    })
}

fn norm_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// `U_p`, `S_p`, the `I` terms and `P_p` along `base`, a solution on a node
/// window of `bundle`'s grid driven by `W`.
pub fn estimate_potentials(
    spec: &FbsdeSpec,
    phi: &CouplingFunction,
    interval: (f64, f64),
    p: f64,
    bundle: &PathBundle,
    base: &SolutionTriple,
) -> Result<Potentials> {
    check_p(p)?;
    let cells = phi.cell_values(bundle.grid())?;
    let coupled = couple_increments(bundle.w(), bundle.w_prime(), &cells);
    potentials_with(spec, &cells, interval, p, bundle, &coupled, base)
}

fn potentials_with(
    spec: &FbsdeSpec,
    cells: &[f64],
    interval: (f64, f64),
    p: f64,
    bundle: &PathBundle,
    coupled: &Increments,
    base: &SolutionTriple,
) -> Result<Potentials> {
    check_solution(base, bundle, spec)?;
    let (a, c) = interval_nodes(base.grid(), interval)?;
    let Dims { n: nx, m, d } = spec.dims;
    let (dt, k0, kt) = (base.grid().step(), base.start_node(), base.n_steps());
    let coef = &spec.coefficients;
    let lip = spec.lipschitz;
    let phi_energy: f64 = (a..c).map(|k| cells[k0 + k] * cells[k0 + k] * dt).sum();
    // coefficient gaps only exist for coefficients that read the path
    let random = spec.path_dependent;

    let rows: Vec<[f64; 4]> = (0..base.n_paths())
        .into_par_iter()
        .map(|q| {
            let (pw, pc) = (bundle.w().path(q), coupled.path(q));
            let (lw, lc) = if random { (pw.node_levels(), pc.node_levels()) } else { (Vec::new(), Vec::new()) };
            let ctx = |k: usize, lv: &[f64]| -> (f64, usize, Vec<f64>) {
                let g = k0 + k;
                let w = if lv.is_empty() { Vec::new() } else { lv[g * d..(g + 1) * d].to_vec() };
                (base.grid().node(k), g, w)
            };
            let (zx, zy) = (vec![0.0; nx], vec![0.0; m]);
            let mut s0 = vec![0.0; nx * d];
            let (mut sup_x, mut sup_y, mut sig_energy) = (0.0f64, 0.0f64, 0.0);
            for k in a..=c {
                sup_x = sup_x.max(norm_sq(base.x(k, q)));
                sup_y = sup_y.max(norm_sq(base.y(k, q)));
            }
            for k in a..c {
                let ph = cells[k0 + k];
                if ph != 0.0 {
                    let (u, node, w) = ctx(k, &lw);
                    coef.sigma(&Ctx { u, node, w: &w, path: pw }, &zx, &zy, &mut s0);
                    sig_energy += ph * ph * norm_sq(&s0) * dt;
                }
            }
            let s_row = phi_energy.powf(p / 2.0)
                * (pow_abs(lip.mu[0], p) * pow_half(sup_x, p) + pow_abs(lip.mu[1], p) * pow_half(sup_y, p))
                + pow_half(sig_energy, p);
            if !random {
                return [0.0, s_row, 0.0, 0.0];
            }
            let (mut b1, mut b2) = (vec![0.0; nx], vec![0.0; nx]);
            let (mut mu1, mut mu2) = (vec![0.0; nx * d], vec![0.0; nx * d]);
            let (mut f1, mut f2) = (vec![0.0; m], vec![0.0; m]);
            let (mut ub, mut umu, mut uf) = (0.0, 0.0, 0.0);
            for k in a..c {
                // cell (u_k, u_{k+1}]: state at its left node, Z on the cell
                let (x, y, z) = (base.x(k, q), base.y(k, q), base.z(k + 1, q));
                let (u, node, w) = ctx(k, &lw);
                let (_, _, wc) = ctx(k, &lc);
                let cw = Ctx { u, node, w: &w, path: pw };
                let cc = Ctx { u, node, w: &wc, path: pc };
                coef.drift(&cw, x, y, z, &mut b1);
                coef.drift(&cc, x, y, z, &mut b2);
                coef.diffusion(&cw, x, y, z, &mut mu1);
                coef.diffusion(&cc, x, y, z, &mut mu2);
                coef.generator(&cw, x, y, z, &mut f1);
                coef.generator(&cc, x, y, z, &mut f2);
                ub += norm_sq_diff(&b1, &b2).sqrt() * dt;
                umu += norm_sq_diff(&mu1, &mu2) * dt;
                uf += norm_sq_diff(&f1, &f2).sqrt() * dt;
            }
            let u_row = pow_abs(ub, p) + pow_half(umu, p) + pow_abs(uf, p);
            let (u, node, w) = ctx(kt, &lw);
            let (_, _, wc) = ctx(kt, &lc);
            let (mut g1, mut g2) = (vec![0.0; m], vec![0.0; m]);
            coef.terminal(&Ctx { u, node, w: &w, path: pw }, base.x(kt, q), &mut g1);
            coef.terminal(&Ctx { u, node, w: &wc, path: pc }, base.x(kt, q), &mut g2);
            let g_row = pow_half(norm_sq_diff(&g1, &g2), p);
            [u_row, s_row, g_row, 0.0]
        })
        .collect();
    let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<_>>();
    let u_p = Estimate::from_samples(&col(0));
    let s_p = stable_mean(&col(1));
    let terminal_gap = Estimate::from_samples(&col(2));
    let apriori = apriori_check(spec, base, bundle.w(), p)?;
    let local = zero_function_rows(spec, base, bundle.w(), a, c, p)?;
    let lcol = |i: usize| stable_mean(&local.iter().map(|r| r[i]).collect::<Vec<_>>());
    Ok(Potentials {
        u_p,
        s_p,
        i_b: lcol(2),
        i_f: lcol(4),
        i_mu: lcol(3),
        i_t: apriori.potential,
        terminal_gap,
        p_p: terminal_gap.mean + u_p.mean,
    })
}

/// Outcome of a bound study across several reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundStudy {
    pub ratios: Vec<Option<f64>>,
    /// `max / min` of the defined positive ratios.
    pub spread: Option<f64>,
    pub factor: f64,
    /// Some report has `cv > 0` against vanishing bound terms.
    pub violation: bool,
    pub pass: bool,
}

/// Check that `cv / bound_terms` stays within `factor` across the reports.
pub fn verify_bound(reports: &[VarianceReport], factor: f64) -> Result<BoundStudy> {
    if reports.len() < 3 {
        return Err(Error::config(format!("a bound study needs at least 3 reports, got {}", reports.len())));
    }
    if !(factor >= 1.0) {
        return Err(Error::config(format!("spread factor must be at least 1, got {factor}")));
    }
    let ratios: Vec<Option<f64>> = reports.iter().map(|r| r.ratio).collect();
    let positive: Vec<f64> = ratios.iter().flatten().copied().filter(|&r| r > 0.0).collect();
    let spread = if positive.is_empty() {
        None
    } else {
        let hi = positive.iter().copied().fold(f64::MIN, f64::max);
        let lo = positive.iter().copied().fold(f64::MAX, f64::min);
        Some(hi / lo)
    };
    let violation = reports.iter().any(|r| r.violation);
    let pass = !violation && spread.map_or(true, |s| s <= factor);
    Ok(BoundStudy { ratios, spread, factor, violation, pass })
}

/// Flat CSV row of a report.
#[derive(Debug, Serialize)]
struct CsvRow {
    phi: String,
    t1: f64,
    t2: f64,
    p: f64,
    sup_x: f64,
    sup_x_se: f64,
    sup_y: f64,
    sup_y_se: f64,
    z_gap: f64,
    z_gap_se: f64,
    z_energy: f64,
    z_energy_se: f64,
    cv: f64,
    cv_se: f64,
    u_p: f64,
    s_p: f64,
    i_b: f64,
    i_f: f64,
    i_mu: f64,
    i_t: f64,
    p_p: f64,
    xi_gap: f64,
    terminal_gap: f64,
    bound_terms: f64,
    ratio: Option<f64>,
    violation: bool,
}

fn phi_label(phi: &CouplingFunction) -> String {
    match phi {
        CouplingFunction::Constant(r) => format!("const:{r}"),
        CouplingFunction::Indicator { a, c } => format!("ind:{a}:{c}"),
        CouplingFunction::Tabulated(v) => format!("table:{}", v.len()),
    }
}

/// Write one CSV row per report.
pub fn write_csv<W: Write>(reports: &[VarianceReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(CsvRow {
            phi: phi_label(&r.phi),
            t1: r.interval.0,
            t2: r.interval.1,
            p: r.p,
            sup_x: r.sup_x.mean,
            sup_x_se: r.sup_x.std_err,
            sup_y: r.sup_y.mean,
            sup_y_se: r.sup_y.std_err,
            z_gap: r.z_gap.mean,
            z_gap_se: r.z_gap.std_err,
            z_energy: r.z_energy.mean,
            z_energy_se: r.z_energy.std_err,
            cv: r.cv.mean,
            cv_se: r.cv.std_err,
            u_p: r.u_p.mean,
            s_p: r.s_p,
            i_b: r.i_b,
            i_f: r.i_f,
            i_mu: r.i_mu,
            i_t: r.i_t,
            p_p: r.p_p,
            xi_gap: r.xi_gap.mean,
            terminal_gap: r.terminal_gap.mean,
            bound_terms: r.bound_terms,
            ratio: r.ratio,
            violation: r.violation,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(reports: &[VarianceReport], path: &Path) -> Result<()> {
    write_csv(reports, std::fs::File::create(path)?)
}

pub fn to_json(reports: &[VarianceReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AffineRandomCoefficients, LinearCoefficients};
    use crate::paths::sample_paths;

    fn setup(n_steps: usize, n_paths: usize, seed: u64) -> (TimeGrid, PathBundle) {
        let grid = TimeGrid::unit(1.0, n_steps).unwrap();
        let bundle = sample_paths(&grid, 1, n_paths, seed, 0).unwrap();
        (grid, bundle)
    }

    fn cv(spec: &FbsdeSpec, phi: CouplingFunction, interval: (f64, f64), p: f64, seed: u64) -> VarianceReport {
        let (grid, bundle) = setup(32, 20_000, seed);
        estimate_cv(spec, &phi, &grid, interval, p, &bundle, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn zero_coupling_gives_bitwise_zero_gaps() {
        let spec = LinearCoefficients::martingale().into_spec(0.0).unwrap();
        let r = cv(&spec, CouplingFunction::constant(0.0), (0.0, 1.0), 2.0, 3);
        for e in [r.sup_x, r.sup_y, r.z_gap, r.z_energy, r.cv] {
            assert_eq!(e, Estimate::ZERO);
        }
        assert_eq!(r.bound_terms, 0.0);
        assert_eq!(r.ratio, None);
        assert!(!r.violation);
    }

    #[test]
    fn pure_forward_doob_bracket() {
        let s0 = 0.7;
        let spec = LinearCoefficients { s0: vec![s0], ..LinearCoefficients::zero(1) }.into_spec(0.0).unwrap();
        let phi = CouplingFunction::indicator(0.25, 0.5);
        let var = 2.0 * s0 * s0 * 0.25;
        let r = cv(&spec, phi.clone(), (0.0, 1.0), 2.0, 5);
        assert!(r.sup_x.mean >= var - 3.0 * r.sup_x.std_err);
        assert!(r.sup_x.mean <= 4.0 * var + 3.0 * r.sup_x.std_err);
        // the gap is frozen after c, so its sup over [c, T] is the terminal gap
        let t = cv(&spec, phi, (0.5, 1.0), 2.0, 5);
        assert!(t.sup_x.within(var, 4.0), "{:?} vs {var}", t.sup_x);
        assert_eq!(t.sup_y, Estimate::ZERO);
        assert_eq!(t.z_energy, Estimate::ZERO);
    }

    #[test]
    fn martingale_z_energy_is_support_length() {
        let spec = LinearCoefficients::martingale().into_spec(0.0).unwrap();
        let r = cv(&spec, CouplingFunction::indicator(0.25, 0.75), (0.0, 1.0), 2.0, 9);
        // Z carries a regression error of a few percent per cell at this size
        assert!((r.z_energy.mean - 0.5).abs() < 0.04, "{:?}", r.z_energy);
        assert!((r.s_p - 0.5).abs() < 1e-12);
        assert_eq!(r.u_p, Estimate::ZERO);
        assert_eq!(r.terminal_gap, Estimate::ZERO);
        assert!((r.cv.mean - (r.sup_x.mean + r.sup_y.mean + r.z_gap.mean + r.z_energy.mean)).abs() < 1e-9);
    }

    #[test]
    fn z_energy_monotone_in_support() {
        let spec = LinearCoefficients::martingale().into_spec(0.0).unwrap();
        let small = cv(&spec, CouplingFunction::indicator(0.25, 0.5), (0.0, 1.0), 2.0, 4);
        let large = cv(&spec, CouplingFunction::indicator(0.25, 0.75), (0.0, 1.0), 2.0, 4);
        assert!(large.z_energy.mean >= small.z_energy.mean);
    }

    #[test]
    fn s_terms_match_direct_integrals() {
        let (grid, bundle) = setup(16, 500, 1);
        let s0 = 1.3;
        let spec = LinearCoefficients { s0: vec![s0], ..LinearCoefficients::zero(1) }.into_spec(0.0).unwrap();
        let sol = solve_on_window(&spec, bundle.w(), 0, 16, &spec.initial, Terminal::Spec, &SolverConfig::default())
            .unwrap();
        let ind = estimate_potentials(&spec, &CouplingFunction::indicator(0.25, 0.75), (0.0, 1.0), 2.0, &bundle, &sol)
            .unwrap();
        assert!((ind.s_p - s0 * s0 * 0.5).abs() < 1e-12);
        assert_eq!(ind.u_p, Estimate::ZERO);
        assert_eq!(ind.terminal_gap, Estimate::ZERO);
        let unit = LinearCoefficients { s0: vec![1.0], ..LinearCoefficients::zero(1) }.into_spec(0.0).unwrap();
        for r in [0.1, 0.4, 1.0] {
            let pot = estimate_potentials(&unit, &CouplingFunction::constant(r), (0.0, 1.0), 2.0, &bundle, &sol).unwrap();
            assert!((pot.s_p - r * r).abs() < 1e-12);
        }
        let _ = grid;
    }

    #[test]
    fn random_coefficients_have_potential() {
        let (grid, bundle) = setup(16, 2000, 2);
        let coef = AffineRandomCoefficients { linear: LinearCoefficients::martingale(), kb: 0.3, ks: 0.0, kf: 0.0, kg: 0.5 };
        let spec = coef.into_spec(0.0).unwrap();
        let sol = solve_on_window(&spec, bundle.w(), 0, 16, &spec.initial, Terminal::Spec, &SolverConfig::default())
            .unwrap();
        let phi = CouplingFunction::indicator(0.0, 0.5);
        let pot = estimate_potentials(&spec, &phi, (0.0, 1.0), 2.0, &bundle, &sol).unwrap();
        assert!(pot.u_p.mean > 0.0);
        // g^phi - g = 0.5 (W_T - W^phi_T), variance 2 * 0.5 on the support
        assert!(pot.terminal_gap.within(0.25 * 2.0 * 0.5, 4.0), "{:?}", pot.terminal_gap);
        assert!((pot.p_p - pot.terminal_gap.mean - pot.u_p.mean).abs() < 1e-15);
        let _ = grid;
    }

    fn report(cv: f64, bound: f64) -> VarianceReport {
        VarianceReport {
            p: 2.0,
            interval: (0.0, 1.0),
            phi: CouplingFunction::constant(0.5),
            sup_x: Estimate::ZERO,
            sup_y: Estimate::ZERO,
            z_gap: Estimate::ZERO,
            z_energy: Estimate::exact(cv),
            cv: Estimate::exact(cv),
            u_p: Estimate::ZERO,
            s_p: bound,
            i_b: 0.0,
            i_f: 0.0,
            i_mu: 0.0,
            i_t: 0.0,
            p_p: 0.0,
            xi_gap: Estimate::ZERO,
            terminal_gap: Estimate::ZERO,
            bound_terms: bound,
            ratio: (bound > 0.0).then(|| cv / bound),
            violation: bound == 0.0 && cv > 0.0,
        }
    }

    #[test]
    fn bound_study_spread_and_flags() {
        assert!(matches!(verify_bound(&[report(1.0, 1.0), report(1.0, 1.0)], 4.0), Err(Error::Config(_))));
        let ok = verify_bound(&[report(1.0, 1.0), report(2.0, 1.0), report(3.0, 1.0)], 4.0).unwrap();
        assert_eq!(ok.spread, Some(3.0));
        assert!(ok.pass);
        let wide = verify_bound(&[report(1.0, 1.0), report(5.0, 1.0), report(3.0, 1.0)], 4.0).unwrap();
        assert!(!wide.pass);
        let vacuous = verify_bound(&[report(0.0, 0.0), report(0.0, 0.0), report(0.0, 0.0)], 4.0).unwrap();
        assert!(vacuous.pass && vacuous.spread.is_none());
        let bad = verify_bound(&[report(1.0, 0.0), report(1.0, 1.0), report(1.0, 1.0)], 4.0).unwrap();
        assert!(bad.violation && !bad.pass);
    }

    #[test]
    fn csv_has_one_row_per_report() {
        let mut buf = Vec::new();
        write_csv(&[report(1.0, 1.0), report(0.5, 0.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("phi,t1,t2,p,sup_x"));
        assert!(lines[1].starts_with("const:0.5,0.0,1.0,2.0,"));
        let back: Vec<VarianceReport> = serde_json::from_str(&to_json(&[report(1.0, 1.0)]).unwrap()).unwrap();
        assert_eq!(back[0], report(1.0, 1.0));
    }
}
