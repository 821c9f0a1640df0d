//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use coupling_core::augmented::{representation_residual, z_gap_identity};
use coupling_core::coupling::{sandwich_check, SigmaAlgebraWindow};
use coupling_core::decoupling::{build_field, solve_long_horizon, Partition, ProbeDesign};
use coupling_core::experiment::{execute, ExperimentConfig, ExperimentKind, SpecDecl};
use coupling_core::functional::library;
use coupling_core::model::{LinearCoefficients, TrigCoefficients};
use coupling_core::regularity::{
    brownian_terminal_ratio, run_fracpot_check, run_malliavin_test, run_path_regularity, CoefficientSlot, FracCase,
    FracEntry, FracVerdict, FractionalPotentialSpec, MalliavinTarget, RateDecl, Sampling, DEFAULT_R_GRID,
};
use coupling_core::rng::{stream_rng, Lane};
use coupling_core::solvability::{check_solvability, verdict_for};
use coupling_core::solver::{l2_gaps, solve_on_window, solve_small_interval, SolutionTriple, Terminal};
use coupling_core::stats::{loglog_slope, sample_covariance, sample_variance};
use coupling_core::variance::{estimate_cv, verify_bound, DEFAULT_SPREAD_FACTOR};
use coupling_core::*;
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, ok: bool, detail: String, start: Instant) {
    let tag = if ok { "PASS" } else { "FAIL" };
    // straight to the process stdout so the line survives test capture
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{tag} [{id:02}] {name}: {detail} ({:.1}s)", start.elapsed().as_secs_f64());
    let _ = out.flush();
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn martingale() -> FbsdeSpec {
    LinearCoefficients::martingale().into_spec(0.0).unwrap()
}

fn unit_bundle(n_steps: usize, n_paths: usize, seed: u64) -> PathBundle {
    sample_paths(&TimeGrid::unit(1.0, n_steps).unwrap(), 1, n_paths, seed, 0).unwrap()
}

fn solve(spec: &FbsdeSpec, bundle: &PathBundle) -> SolutionTriple {
    solve_small_interval(spec, bundle.grid(), bundle, Default::default(), Default::default()).unwrap()
}

/// `sqrt(E sum_k |.|^2 du)` distances of the martingale solution to `(W, W, 1)`.
fn martingale_errors(sol: &SolutionTriple, w: &Increments) -> [f64; 3] {
    let n = sol.n_steps();
    let dt = w.grid().step();
    let np = w.n_paths();
    let (mut ex, mut ey, mut ez) = (0.0, 0.0, 0.0);
    for k in 1..=n {
        for p in 0..np {
            let wk = w.path(p).value(k, 0);
            ex += (sol.x(k, p)[0] - wk).powi(2);
            ey += (sol.y(k, p)[0] - wk).powi(2);
            ez += (sol.z(k, p)[0] - 1.0).powi(2);
        }
    }
    let s = dt / np as f64;
    [(ex * s).sqrt(), (ey * s).sqrt(), (ez * s).sqrt()]
}

fn coarsen(w: &Increments, n: usize) -> Increments {
    let fine = w.grid().n_steps();
    let m = fine / n;
    let data = (0..w.n_paths())
        .flat_map(|p| {
            let path = w.path(p);
            (0..n).map(move |k| (0..m).map(|i| path.increment(k * m + i, 0)).sum::<f64>())
        })
        .collect();
    Increments::from_vec(TimeGrid::unit(1.0, n).unwrap(), 1, w.n_paths(), data).unwrap()
}

#[test]
fn c01_coupled_path_law() {
    let _g = serial();
    let t = Instant::now();
    let bundle = unit_bundle(16, 100_000, 101);
    let base = bundle.w().values_at(16, 0);
    let mut ok = true;
    let mut detail = Vec::new();
    for r in [0.25, 0.6, 0.9] {
        let coupled = build_coupled_path(&bundle, &CouplingFunction::constant(r)).unwrap();
        let end = coupled.values_at(16, 0);
        let var = sample_variance(&end);
        let cov = sample_covariance(&base, &end);
        let want = (1.0 - r * r).sqrt();
        ok &= (var - 1.0).abs() <= 0.02 && (cov - want).abs() <= 0.02;
        detail.push(format!("r={r}: var {var:.4}, cov {cov:.4} vs {want:.4}"));
    }
    verdict(1, "coupled-path law", ok, detail.join("; "), t);
}

#[test]
fn c02_sandwich() {
    let _g = serial();
    let t = Instant::now();
    let bundle = unit_bundle(4, 20_000, 202);
    let window = SigmaAlgebraWindow::new(0.25, 0.75).unwrap();
    let f = library::terminal_value(0);
    let mut ok = true;
    let mut detail = Vec::new();
    for (p, want) in [(2.0, [0.25, 0.5, 1.0]), (4.0, [3.0 / 16.0, 0.75, 3.0])] {
        let rep = sandwich_check(&f, &bundle, &window, p, 256).unwrap();
        let hits = [rep.lhs, rep.mid, rep.rhs].iter().zip(want).all(|(e, w)| e.within(w, 3.0));
        ok &= hits && rep.pass;
        detail.push(format!("p={p}: ({:.4}, {:.4}, {:.4}) chain {}", rep.lhs.mean, rep.mid.mean, rep.rhs.mean, rep.pass));
    }
    verdict(2, "sandwich", ok, detail.join("; "), t);
}

#[test]
fn c03_malliavin_ratio() {
    let _g = serial();
    let t = Instant::now();
    let sampling = Sampling { grid: TimeGrid::unit(1.0, 4).unwrap(), dim: 1, n_paths: 100_000, seed: 303, stream_id: 0 };
    let lin = run_malliavin_test(&MalliavinTarget::Functional(&library::terminal_value(0)), &DEFAULT_R_GRID, &sampling).unwrap();
    let worst = lin
        .curve
        .iter()
        .map(|p| (p.ratio.mean / brownian_terminal_ratio(p.r, 1.0) - 1.0).abs())
        .fold(0.0, f64::max);
    let small = lin.curve[0].ratio.mean;
    let sq = run_malliavin_test(&MalliavinTarget::Functional(&library::terminal_square(0)), &DEFAULT_R_GRID, &sampling).unwrap();
    let small_sq = sq.curve[0].ratio.mean;
    let ok = worst <= 0.05 && (small - 1.0).abs() <= 0.1 && (small_sq - 4.0).abs() <= 0.4;
    let detail = format!("max rel dev {worst:.4}, W_1 small-r {small:.4}, W_1^2 small-r {small_sq:.4}");
    verdict(3, "Malliavin ratio", ok, detail, t);
}

#[test]
fn c04_algebraic_identities() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = stream_rng(404, 0, Lane::Auxiliary, 0, 0);
    let mut worst_identity: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..5);
        let z: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let zp: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let phi: f64 = rng.gen();
        let (l, r) = z_gap_identity(&z, &zp, phi);
        worst_identity = worst_identity.max((l - r).abs() / l.max(1.0));
    }
    let bundle = unit_bundle(4, 1, 404);
    let specs = [
        TrigCoefficients::default().into_spec(0.0).unwrap(),
        LinearCoefficients { a: 0.7, s0: vec![1.0], sx: 0.3, gx: 0.5, ..LinearCoefficients::zero(1) }.into_spec(0.0).unwrap(),
    ];
    let mut worst_repr: f64 = 0.0;
    for spec in &specs {
        for _ in 0..1000 {
            let node = rng.gen_range(0..=4);
            let ctx = Ctx { u: node as f64 / 4.0, node, w: &[], path: bundle.w().path(0) };
            let alpha: f64 = rng.gen();
            let (x, y, z) = ([rng.gen_range(-2.0..2.0)], [rng.gen_range(-2.0..2.0)], [rng.gen_range(-2.0..2.0)]);
            worst_repr = worst_repr.max(representation_residual(spec, &ctx, alpha, &x, &y, &z));
        }
    }
    let ok = worst_identity <= 1e-12 && worst_repr <= 1e-12;
    verdict(4, "algebraic identities", ok, format!("identity {worst_identity:.2e}, representation {worst_repr:.2e}"), t);
}

#[test]
fn c05_solvability_gate() {
    let _g = serial();
    let t = Instant::now();
    let first = verdict_for(0.5, 1.5, 2.0, None).unwrap();
    let second = verdict_for(1.0, 1.0, 2.0, None).unwrap();
    let no_a = LinearCoefficients { gx: 25.0, s0: vec![1.0], ..LinearCoefficients::zero(1) }.into_spec(0.0).unwrap();
    let third = check_solvability(&no_a, 2.0, None).unwrap();
    let built = LinearCoefficients { a: 1.5, gx: 0.5, ..LinearCoefficients::zero(1) }.into_spec(0.0).unwrap();
    let built = check_solvability(&built, 2.0, None).unwrap();
    let ok = first.pass && first.product == 0.75 && !second.pass && second.product == 1.0 && third.pass && built.pass;
    let detail = format!(
        "(0.5, 1.5) -> {}, (1, 1) -> {}, A = 0 -> {} (product {})",
        first.pass, second.pass, third.pass, third.product
    );
    verdict(5, "solvability gate", ok, detail, t);
}

#[test]
fn c06_solver_oracle() {
    let _g = serial();
    let t = Instant::now();
    let spec = martingale();
    // coarse grids aggregate the fine increments, so all levels share paths
    let fine = unit_bundle(256, 100_000, 606);
    let mut errs = Vec::new();
    for n in [64, 128, 256] {
        let w = coarsen(fine.w(), n);
        let sol = solve_on_window(&spec, &w, 0, n, &spec.initial, Terminal::Spec, &SolverConfig::default()).unwrap();
        errs.push(martingale_errors(&sol, &w));
    }
    let finest = errs[2].iter().all(|e| *e <= 0.05);
    let monotone = (0..3).all(|c| errs[1][c] <= 1.1 * errs[0][c].max(1e-3) && errs[2][c] <= 1.1 * errs[1][c].max(1e-3));
    let detail = errs.iter().map(|e| format!("({:.4}, {:.4}, {:.4})", e[0], e[1], e[2])).collect::<Vec<_>>().join(" ");
    verdict(6, "solver oracle", finest && monotone, detail, t);
}

#[test]
fn c07_decoupling_field() {
    let _g = serial();
    let t = Instant::now();
    let spec = martingale();
    let bundle = unit_bundle(64, 20_000, 707);
    let cfg = SolverConfig::default();
    let part = Partition::uniform(bundle.grid(), 4).unwrap();
    let field = build_field(&spec, &part, &ProbeDesign::default(), &cfg).unwrap();
    let stitched = solve_long_horizon(&spec, &part, &field, &bundle, &cfg).unwrap();
    let direct = solve(&spec, &bundle);
    let gaps = l2_gaps(&stitched.solution, &direct).unwrap();
    let residual = stitched.decoupling_residuals.iter().cloned().fold(0.0, f64::max);

    let kappa = 1.7;
    let flat = LinearCoefficients { g0: kappa, s0: vec![1.0], ..LinearCoefficients::zero(1) }.into_spec(0.0).unwrap();
    let flat_field = build_field(&flat, &part, &ProbeDesign { n_probes: 512, ..ProbeDesign::default() }, &cfg).unwrap();
    let mut out = [0.0];
    let exact = (0..part.n_intervals()).all(|i| {
        [-3.0, 0.0, 0.4, 2.5].iter().all(|&x| {
            flat_field.eval(i, &[], &[x], &mut out);
            out[0] == kappa
        })
    });
    let ok = gaps.iter().all(|g| *g <= 0.1) && residual <= 1e-3 && exact;
    let detail = format!("gaps ({:.4}, {:.4}, {:.4}), residual {residual:.2e}, constant field exact {exact}", gaps[0], gaps[1], gaps[2]);
    verdict(7, "decoupling field", ok, detail, t);
}

#[test]
fn c08_cv_bound_study() {
    let _g = serial();
    let t = Instant::now();
    let spec = martingale();
    let bundle = unit_bundle(32, 20_000, 808);
    let grid = *bundle.grid();
    let cfg = SolverConfig::default();
    let mut phis: Vec<CouplingFunction> =
        [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)].iter().map(|&(a, c)| CouplingFunction::indicator(a, c)).collect();
    let rs = [0.1, 0.2, 0.4];
    phis.extend(rs.iter().map(|&r| CouplingFunction::constant(r)));
    let reports: Vec<_> = phis.iter().map(|phi| estimate_cv(&spec, phi, &grid, (0.0, 1.0), 2.0, &bundle, &cfg).unwrap()).collect();
    let exact_zero = reports.iter().all(|r| r.u_p.mean == 0.0 && r.u_p.std_err == 0.0 && r.terminal_gap.mean == 0.0);
    let study = verify_bound(&reports, DEFAULT_SPREAD_FACTOR).unwrap();
    let cv: Vec<f64> = reports[4..].iter().map(|r| r.cv.mean).collect();
    let slope = loglog_slope(&rs, &cv).unwrap_or(f64::NAN);
    let spread = study.spread.unwrap_or(f64::INFINITY);
    let ok = exact_zero && study.pass && spread <= 4.0 && (slope - 2.0).abs() <= 0.2;
    let detail = format!("U_p and terminal gap zero {exact_zero}, spread {spread:.3}, slope {slope:.3}");
    verdict(8, "CV bound study", ok, detail, t);
}

#[test]
fn c09_path_regularity() {
    let _g = serial();
    let t = Instant::now();
    let spec = martingale();
    let bundle = unit_bundle(32, 20_000, 909);
    let pairs = [(0.25, 0.28125), (0.25, 0.3125), (0.25, 0.375), (0.25, 0.5), (0.25, 0.75), (0.0, 1.0)];
    let rep = run_path_regularity(&spec, &bundle, &pairs, 2.0, &SolverConfig::default()).unwrap();
    let slope = rep.y_slope.unwrap_or(f64::NAN);
    let z_ok = rep.rows.iter().all(|row| row.z_within_cv);
    let ok = (slope - 1.0).abs() <= 0.1 && z_ok;
    verdict(9, "path regularity", ok, format!("Y slope {slope:.3}, Z energy within CV on all pairs {z_ok}"), t);
}

#[test]
fn c10_fractional_potential() {
    let _g = serial();
    let t = Instant::now();
    let sampling = Sampling { grid: TimeGrid::unit(1.0, 16).unwrap(), dim: 1, n_paths: 20_000, seed: 1010, stream_id: 0 };
    let case_two = |driver, beta| FractionalPotentialSpec {
        case: FracCase::II,
        p: 2.0,
        theta_len: 3,
        entries: vec![FracEntry { slot: CoefficientSlot::B, driver, decl: RateDecl::Bounded { bound: 1.0 }, rate: None, beta }],
    };
    let brownian = run_fracpot_check(&case_two(library::brownian_process(0), 1.0), &DEFAULT_R_GRID, &sampling).unwrap();
    let small = brownian.entries[0].curve[0].ratio.mean;
    let flat = run_fracpot_check(&case_two(library::constant_process(2.0), 1.0), &DEFAULT_R_GRID, &sampling).unwrap();
    let rough = run_fracpot_check(&case_two(library::brownian_process(0), 0.25), &DEFAULT_R_GRID, &sampling).unwrap();
    let ok = brownian.verdict == FracVerdict::Holds
        && (small - 1.0).abs() <= 0.1
        && flat.verdict == FracVerdict::HoldsTrivially
        && rough.verdict == FracVerdict::Fails;
    let detail = format!(
        "W beta=1 {:?} (small-r {small:.3}), deterministic {:?}, W beta=1/4 {:?}",
        brownian.verdict, flat.verdict, rough.verdict
    );
    verdict(10, "fractional potential", ok, detail, t);
}

#[test]
fn c11_reproducibility() {
    let _g = serial();
    let t = Instant::now();
    let mut cv = ExperimentConfig::new(ExperimentKind::Cv);
    cv.spec = SpecDecl::Martingale;
    cv.steps = 8;
    cv.paths = 2000;
    cv.seed = 1111;
    cv.phi = vec![CouplingFunction::constant(0.3), CouplingFunction::indicator(0.25, 0.5)];
    let mut sandwich = ExperimentConfig::new(ExperimentKind::Sandwich);
    sandwich.steps = 4;
    sandwich.paths = 2000;
    sandwich.n_inner = 64;
    let mut ok = true;
    let mut detail = Vec::new();
    for cfg in [cv, sandwich] {
        let a = execute(&cfg, true).unwrap();
        let b = execute(&cfg, true).unwrap();
        let same = a.csv == b.csv && !a.csv.is_empty() && a.manifest.wall_time_s.is_none();
        ok &= same;
        detail.push(format!("{}: {} bytes identical {same}", cfg.kind.name(), a.csv.len()));
    }
    verdict(11, "reproducibility", ok, detail.join("; "), t);
}
