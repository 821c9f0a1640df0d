//! JSON-configured experiments with CSV/JSON reports and a run manifest.
//!
//! CSV schema version is [`CSV_SCHEMA`]; every report file starts with a
//! header row and floats are written in shortest round-trip form, so reruns
//! in deterministic mode are byte-identical.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::{sandwich_check, SigmaAlgebraWindow};
use crate::decoupling::{build_field, solve_long_horizon, Partition, ProbeDesign};
use crate::error::{Error, Result};
use crate::functional::{library, PathFunctional};
use crate::grid::{CouplingFunction, TimeGrid};
use crate::model::{AffineRandomCoefficients, FbsdeSpec, LinearCoefficients, TrigCoefficients};
use crate::paths::{build_coupled_path, sample_paths};
use crate::regularity::{
    run_fracpot_check, run_malliavin_test, run_path_regularity, CoefficientSlot, FracCase, FracEntry,
    FractionalPotentialSpec, FracVerdict, MalliavinTarget, NodeComponent, RateDecl, Sampling, DEFAULT_R_GRID,
};
use crate::solver::{solve_on_window, SolverConfig, Terminal};
use crate::stats::{sample_covariance, sample_variance, Estimate};
use crate::variance::{estimate_cv, verify_bound, write_csv, VarianceReport, DEFAULT_SPREAD_FACTOR};

pub const CSV_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Paths,
    Solve,
    Cv,
    Sandwich,
    Malliavin,
    Regularity,
    Fracpot,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Paths => "paths",
            ExperimentKind::Solve => "solve",
            ExperimentKind::Cv => "cv",
            ExperimentKind::Sandwich => "sandwich",
            ExperimentKind::Malliavin => "malliavin",
            ExperimentKind::Regularity => "regularity",
            ExperimentKind::Fracpot => "fracpot",
        }
    }
}

/// Built-in coefficient pack or an inline declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecDecl {
    Martingale,
    Linear(LinearCoefficients),
    AffineRandom(AffineRandomCoefficients),
    Trig(TrigCoefficients),
}

impl SpecDecl {
    pub fn build(&self, x0: f64) -> Result<FbsdeSpec> {
        match self {
            SpecDecl::Martingale => LinearCoefficients::martingale().into_spec(x0),
            SpecDecl::Linear(c) => c.clone().into_spec(x0),
            SpecDecl::AffineRandom(c) => c.clone().into_spec(x0),
            SpecDecl::Trig(c) => c.clone().into_spec(x0),
        }
    }
}

/// Functionals of the first Brownian coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FunctionalDecl {
    TerminalValue,
    TerminalSquare,
    ValueAt { t: f64 },
    Constant { value: f64 },
    BrownianProcess,
    ConstantProcess { value: f64 },
    RunningMax,
}

impl FunctionalDecl {
    pub fn build(&self) -> PathFunctional {
        match self {
            FunctionalDecl::TerminalValue => library::terminal_value(0),
            FunctionalDecl::TerminalSquare => library::terminal_square(0),
            FunctionalDecl::ValueAt { t } => library::value_at(*t),
            FunctionalDecl::Constant { value } => library::constant(*value),
            FunctionalDecl::BrownianProcess => library::brownian_process(0),
            FunctionalDecl::ConstantProcess { value } => library::constant_process(*value),
            FunctionalDecl::RunningMax => library::running_max(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDecl {
    pub time: f64,
    pub component: NodeComponent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FracEntryDecl {
    pub slot: CoefficientSlot,
    pub driver: FunctionalDecl,
    pub beta: f64,
    pub rate: RateDecl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FracDecl {
    pub case: FracCase,
    pub p: f64,
    pub entries: Vec<FracEntryDecl>,
}

impl FracDecl {
    fn build(&self) -> FractionalPotentialSpec {
        FractionalPotentialSpec {
            case: self.case,
            p: self.p,
            theta_len: 3,
            entries: self
                .entries
                .iter()
                .map(|e| FracEntry { slot: e.slot, driver: e.driver.build(), decl: e.rate, rate: None, beta: e.beta })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Admissible spread of fitted bound constants in a cv study.
    pub spread_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { spread_factor: DEFAULT_SPREAD_FACTOR }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_spec")]
    pub spec: SpecDecl,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub stream_id: u64,
    /// Subintervals for the long-horizon solve.
    #[serde(default = "one_usize")]
    pub partition: usize,
    #[serde(default)]
    pub phi: Vec<CouplingFunction>,
    #[serde(default = "default_p")]
    pub p: Vec<f64>,
    /// Measurement intervals of a cv study; the whole horizon if empty.
    #[serde(default)]
    pub intervals: Vec<(f64, f64)>,
    /// `(s, r)` pairs of a regularity study.
    #[serde(default)]
    pub pairs: Vec<(f64, f64)>,
    #[serde(default = "default_r_grid")]
    pub r_grid: Vec<f64>,
    #[serde(default)]
    pub functional: Option<FunctionalDecl>,
    #[serde(default)]
    pub node: Option<NodeDecl>,
    /// `(a, c)` of the sandwich window.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    #[serde(default = "default_inner")]
    pub n_inner: usize,
    #[serde(default)]
    pub fracpot: Option<FracDecl>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_spec() -> SpecDecl {
    SpecDecl::Martingale
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_steps() -> usize {
    64
}
fn default_paths() -> usize {
    10_000
}
fn default_seed() -> u64 {
    1
}
fn default_p() -> Vec<f64> {
    vec![2.0]
}
fn default_r_grid() -> Vec<f64> {
    DEFAULT_R_GRID.to_vec()
}
fn default_inner() -> usize {
    256
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Defaults for `kind`; the sandwich and Malliavin kinds default to
    /// `xi = W_1` on `(0.25, 0.75]`.
    pub fn new(kind: ExperimentKind) -> Self {
        let mut cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({ "kind": kind })).expect("defaults");
        match kind {
            ExperimentKind::Sandwich => {
                cfg.functional = Some(FunctionalDecl::TerminalValue);
                cfg.window = Some((0.25, 0.75));
                cfg.p = vec![2.0, 4.0];
            }
            ExperimentKind::Malliavin => cfg.functional = Some(FunctionalDecl::TerminalValue),
            ExperimentKind::Cv | ExperimentKind::Paths => {
                cfg.phi = vec![CouplingFunction::constant(0.5)];
            }
            _ => {}
        }
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::unit(self.horizon, self.steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.steps == 0 || self.paths == 0 || self.n_inner == 0 || self.partition == 0 {
            return Err(Error::config("steps, paths, n_inner and partition must be positive"));
        }
        if let Some(p) = self.p.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::config(format!("exponent {p} must be positive")));
        }
        for phi in &self.phi {
            phi.validate()?;
        }
        if let Some(r) = self.r_grid.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::Domain(format!("r = {r} outside (0, 1]")));
        }
        if !(self.tolerances.spread_factor >= 1.0) {
            return Err(Error::config("spread_factor must be at least 1"));
        }
        self.spec.build(self.x0)?;
        let need = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::config(format!("{} needs {what}", self.kind.name()))) };
        match self.kind {
            ExperimentKind::Sandwich => need(self.functional.is_some() && self.window.is_some(), "functional and window"),
            ExperimentKind::Malliavin => need(self.functional.is_some() != self.node.is_some(), "exactly one of functional and node"),
            ExperimentKind::Cv => need(!self.phi.is_empty(), "at least one phi"),
            ExperimentKind::Regularity => need(!self.pairs.is_empty(), "pairs"),
            ExperimentKind::Fracpot => need(self.fracpot.is_some(), "a fracpot declaration"),
            ExperimentKind::Paths | ExperimentKind::Solve => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    /// A tested bound or property failed; maps to exit code 2.
    Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub csv_schema: u32,
    /// Omitted in deterministic mode.
    pub wall_time_s: Option<f64>,
    pub deterministic: bool,
    pub status: Status,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: Status,
    pub manifest: Manifest,
    pub csv: Vec<u8>,
    pub json: String,
}

pub fn version_string() -> String {
    format!("coupling-core v{}", env!("CARGO_PKG_VERSION"))
}

struct Report {
    status: Status,
    csv: Vec<u8>,
    json: serde_json::Value,
}

fn csv_rows<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn status_of(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Violation
    }
}

fn sampling(cfg: &ExperimentConfig, dim: usize) -> Result<Sampling> {
    Ok(Sampling { grid: cfg.grid()?, dim, n_paths: cfg.paths, seed: cfg.seed, stream_id: cfg.stream_id })
}

#[derive(Serialize)]
struct PathsRow {
    phi: String,
    t: f64,
    var_w: f64,
    var_w_phi: f64,
    cov: f64,
    cov_expected: f64,
}

fn run_paths(cfg: &ExperimentConfig) -> Result<Report> {
    let grid = cfg.grid()?;
    let bundle = sample_paths(&grid, 1, cfg.paths, cfg.seed, cfg.stream_id)?;
    let phis = if cfg.phi.is_empty() { vec![CouplingFunction::constant(0.0)] } else { cfg.phi.clone() };
    let mut rows = Vec::new();
    for phi in &phis {
        let coupled = build_coupled_path(&bundle, phi)?;
        let cells = phi.cell_values(&grid)?;
        let mut expected = 0.0;
        for k in 1..=grid.n_steps() {
            expected += crate::grid::retained_weight(cells[k - 1]) * grid.step();
            let (a, b) = (bundle.w().values_at(k, 0), coupled.values_at(k, 0));
            rows.push(PathsRow {
                phi: format!("{phi:?}"),
                t: grid.node(k),
                var_w: sample_variance(&a),
                var_w_phi: sample_variance(&b),
                cov: sample_covariance(&a, &b),
                cov_expected: expected,
            });
        }
    }
    let json = serde_json::json!({ "n_paths": cfg.paths, "rows": rows.len() });
    Ok(Report { status: Status::Pass, csv: csv_rows(&rows)?, json })
}

#[derive(Serialize)]
struct SolveRow {
    t: f64,
    x_mean: f64,
    x_se: f64,
    y_mean: f64,
    y_se: f64,
    z_sq_mean: f64,
}

fn run_solve(cfg: &ExperimentConfig) -> Result<Report> {
    let spec = cfg.spec.build(cfg.x0)?;
    let grid = cfg.grid()?;
    let bundle = sample_paths(&grid, spec.dims.d, cfg.paths, cfg.seed, cfg.stream_id)?;
    let (sol, residuals) = if cfg.partition > 1 {
        let part = Partition::uniform(&grid, cfg.partition)?;
        let field = build_field(&spec, &part, &ProbeDesign::default(), &cfg.solver)?;
        let long = solve_long_horizon(&spec, &part, &field, &bundle, &cfg.solver)?;
        (long.solution, long.decoupling_residuals)
    } else {
        let sol = solve_on_window(&spec, bundle.w(), 0, grid.n_steps(), &spec.initial, Terminal::Spec, &cfg.solver)?;
        (sol, Vec::new())
    };
    let first = |v: &[f64], w: usize| v.iter().step_by(w).copied().collect::<Vec<_>>();
    let rows: Vec<SolveRow> = (0..=sol.n_steps())
        .map(|k| {
            let x = Estimate::from_samples(&first(sol.x_node(k), spec.dims.n));
            let y = Estimate::from_samples(&first(sol.y_node(k), spec.dims.m));
            let z = sol.z_node(k);
            SolveRow {
                t: sol.grid().node(k),
                x_mean: x.mean,
                x_se: x.std_err,
                y_mean: y.mean,
                y_se: y.std_err,
                z_sq_mean: z.iter().map(|v| v * v).sum::<f64>() * spec.dims.d as f64 / z.len() as f64,
            }
        })
        .collect();
    let json = serde_json::json!({
        "spec": spec.name,
        "picard_residuals": sol.trace().residuals,
        "decoupling_residuals": residuals,
    });
    Ok(Report { status: Status::Pass, csv: csv_rows(&rows)?, json })
}

fn run_cv(cfg: &ExperimentConfig) -> Result<Report> {
    let spec = cfg.spec.build(cfg.x0)?;
    let grid = cfg.grid()?;
    let bundle = sample_paths(&grid, spec.dims.d, cfg.paths, cfg.seed, cfg.stream_id)?;
    let intervals = if cfg.intervals.is_empty() { vec![(grid.t_start(), grid.t_end())] } else { cfg.intervals.clone() };
    let mut reports: Vec<VarianceReport> = Vec::new();
    for &p in &cfg.p {
        for phi in &cfg.phi {
            for &iv in &intervals {
                let r = estimate_cv(&spec, phi, &grid, iv, p, &bundle, &cfg.solver)?;
                if spec.is_deterministic() && (r.u_p.mean != 0.0 || r.terminal_gap.mean != 0.0) {
                    return Err(Error::Diagnostic("deterministic coefficients produced a coefficient gap".into()));
                }
                reports.push(r);
            }
        }
    }
    let mut studies = Vec::new();
    for &p in &cfg.p {
        let group: Vec<VarianceReport> = reports.iter().filter(|r| r.p == p).cloned().collect();
        if group.len() >= 3 {
            studies.push(verify_bound(&group, cfg.tolerances.spread_factor)?);
        }
    }
    let ok = !reports.iter().any(|r| r.violation) && studies.iter().all(|s| s.pass);
    let mut csv = Vec::new();
    write_csv(&reports, &mut csv)?;
    let json = serde_json::json!({ "reports": reports, "studies": studies });
    Ok(Report { status: status_of(ok), csv, json })
}

#[derive(Serialize)]
struct SandwichRow {
    p: f64,
    a: f64,
    c: f64,
    lhs: f64,
    lhs_se: f64,
    mid: f64,
    mid_se: f64,
    rhs: f64,
    rhs_se: f64,
    pass: bool,
}

fn run_sandwich(cfg: &ExperimentConfig) -> Result<Report> {
    let f = cfg.functional.as_ref().expect("validated").build();
    let (a, c) = cfg.window.expect("validated");
    let window = SigmaAlgebraWindow::new(a, c)?;
    let grid = cfg.grid()?;
    let bundle = sample_paths(&grid, 1, cfg.paths, cfg.seed, cfg.stream_id)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &p in &cfg.p {
        let r = sandwich_check(&f, &bundle, &window, p, cfg.n_inner)?;
        rows.push(SandwichRow {
            p,
            a,
            c,
            lhs: r.lhs.mean,
            lhs_se: r.lhs.std_err,
            mid: r.mid.mean,
            mid_se: r.mid.std_err,
            rhs: r.rhs.mean,
            rhs_se: r.rhs.std_err,
            pass: r.pass,
        });
        reports.push(r);
    }
    let ok = reports.iter().all(|r| r.pass);
    Ok(Report { status: status_of(ok), csv: csv_rows(&rows)?, json: serde_json::to_value(&reports)? })
}

#[derive(Serialize)]
struct RatioRow {
    entry: String,
    r: f64,
    ratio: f64,
    ratio_se: f64,
    ratio_doubled: f64,
    ratio_doubled_se: f64,
}

fn ratio_rows(entry: &str, curve: &[crate::regularity::RatioPoint], doubled: &[crate::regularity::RatioPoint]) -> Vec<RatioRow> {
    curve
        .iter()
        .zip(doubled)
        .map(|(a, b)| RatioRow {
            entry: entry.to_string(),
            r: a.r,
            ratio: a.ratio.mean,
            ratio_se: a.ratio.std_err,
            ratio_doubled: b.ratio.mean,
            ratio_doubled_se: b.ratio.std_err,
        })
        .collect()
}

fn run_malliavin(cfg: &ExperimentConfig) -> Result<Report> {
    let spec = cfg.spec.build(cfg.x0)?;
    let functional = cfg.functional.as_ref().map(FunctionalDecl::build);
    let target = match (&functional, &cfg.node) {
        (Some(f), _) => MalliavinTarget::Functional(f),
        (None, Some(n)) => MalliavinTarget::Node { spec: &spec, time: n.time, component: n.component, cfg: cfg.solver },
        (None, None) => unreachable!("validated"),
    };
    let dim = if functional.is_some() { 1 } else { spec.dims.d };
    let rep = run_malliavin_test(&target, &cfg.r_grid, &sampling(cfg, dim)?)?;
    let rows = ratio_rows(&rep.target, &rep.curve, &rep.curve_doubled);
    Ok(Report { status: status_of(rep.stability.bounded), csv: csv_rows(&rows)?, json: serde_json::to_value(&rep)? })
}

#[derive(Serialize)]
struct RegularityCsvRow {
    s: f64,
    r: f64,
    x_gap: f64,
    x_gap_se: f64,
    y_gap: f64,
    y_gap_se: f64,
    z_energy: f64,
    z_energy_se: f64,
    cv: Option<f64>,
    cv_se: Option<f64>,
    z_within_cv: bool,
}

fn run_regularity(cfg: &ExperimentConfig) -> Result<Report> {
    let spec = cfg.spec.build(cfg.x0)?;
    let grid = cfg.grid()?;
    let bundle = sample_paths(&grid, spec.dims.d, cfg.paths, cfg.seed, cfg.stream_id)?;
    let mut csv_rows_all = Vec::new();
    let mut reports = Vec::new();
    for &p in &cfg.p {
        let rep = run_path_regularity(&spec, &bundle, &cfg.pairs, p, &cfg.solver)?;
        csv_rows_all.extend(rep.rows.iter().map(|row| RegularityCsvRow {
            s: row.s,
            r: row.r,
            x_gap: row.x_gap.mean,
            x_gap_se: row.x_gap.std_err,
            y_gap: row.y_gap.mean,
            y_gap_se: row.y_gap.std_err,
            z_energy: row.z_energy.mean,
            z_energy_se: row.z_energy.std_err,
            cv: row.cv.as_ref().map(|c| c.cv.mean),
            cv_se: row.cv.as_ref().map(|c| c.cv.std_err),
            z_within_cv: row.z_within_cv,
        }));
        reports.push(rep);
    }
    let ok = reports.iter().all(|r| r.pass);
    Ok(Report { status: status_of(ok), csv: csv_rows(&csv_rows_all)?, json: serde_json::to_value(&reports)? })
}

fn run_fracpot(cfg: &ExperimentConfig) -> Result<Report> {
    let spec = cfg.fracpot.as_ref().expect("validated").build();
    let rep = run_fracpot_check(&spec, &cfg.r_grid, &sampling(cfg, 1)?)?;
    let rows: Vec<RatioRow> = rep
        .entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| ratio_rows(&format!("{i}:{:?}:{}", e.slot, e.driver), &e.curve, &e.curve_doubled))
        .collect();
    let ok = rep.verdict != FracVerdict::Fails;
    Ok(Report { status: status_of(ok), csv: csv_rows(&rows)?, json: serde_json::to_value(&rep)? })
}

fn dispatch(cfg: &ExperimentConfig) -> Result<Report> {
    match cfg.kind {
        ExperimentKind::Paths => run_paths(cfg),
        ExperimentKind::Solve => run_solve(cfg),
        ExperimentKind::Cv => run_cv(cfg),
        ExperimentKind::Sandwich => run_sandwich(cfg),
        ExperimentKind::Malliavin => run_malliavin(cfg),
        ExperimentKind::Regularity => run_regularity(cfg),
        ExperimentKind::Fracpot => run_fracpot(cfg),
    }
}

/// Run without touching the file system. In deterministic mode the work runs
/// on a single-thread pool and no wall time is recorded.
pub fn execute(cfg: &ExperimentConfig, deterministic: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let report = if deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| dispatch(cfg))?
    } else {
        dispatch(cfg)?
    };
    let stem = cfg.kind.name();
    let manifest = Manifest {
        kind: cfg.kind,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        version: version_string(),
        csv_schema: CSV_SCHEMA,
        wall_time_s: (!deterministic).then(|| start.elapsed().as_secs_f64()),
        deterministic,
        status: report.status,
        files: vec![format!("{stem}.csv"), format!("{stem}.json"), "manifest.json".into()],
    };
    let json = serde_json::to_string_pretty(&report.json)?;
    Ok(RunOutcome { status: report.status, manifest, csv: report.csv, json })
}

/// Run and write `<kind>.csv`, `<kind>.json` and `manifest.json` under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig, deterministic: bool) -> Result<RunOutcome> {
    let outcome = execute(cfg, deterministic)?;
    std::fs::create_dir_all(&cfg.out)?;
    let stem = cfg.kind.name();
    std::fs::write(cfg.out.join(format!("{stem}.csv")), &outcome.csv)?;
    std::fs::write(cfg.out.join(format!("{stem}.json")), &outcome.json)?;
    std::fs::write(cfg.out.join("manifest.json"), serde_json::to_string_pretty(&outcome.manifest)?)?;
    log::info!("{stem}: {:?}, reports in {}", outcome.status, cfg.out.display());
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_every_kind() {
        for kind in [ExperimentKind::Paths, ExperimentKind::Solve, ExperimentKind::Cv, ExperimentKind::Sandwich, ExperimentKind::Malliavin] {
            ExperimentConfig::new(kind).validate().unwrap();
        }
        assert!(ExperimentConfig::new(ExperimentKind::Regularity).validate().is_err());
        assert!(ExperimentConfig::new(ExperimentKind::Fracpot).validate().is_err());
    }

    #[test]
    fn config_errors() {
        assert!(ExperimentConfig::from_json(r#"{"kind": "nope"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind": "paths", "steps": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind": "paths", "bogus": 1}"#).is_err());
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"kind": "cv", "phi": [{"constant": 1.5}]}"#),
            Err(Error::Domain(_))
        ));
        let inline = r#"{"kind": "solve", "spec": {"linear": {"bx": 0, "by": 0, "bz": [0], "b0": 0, "sx": 0, "sy": 0,
            "s0": [1], "a": 0, "fx": 0, "fy": 0, "fz": [0], "f0": 1, "gx": 1, "g0": 0}}, "paths": 100, "steps": 4}"#;
        let cfg = ExperimentConfig::from_json(inline).unwrap();
        assert_eq!(cfg.spec.build(0.0).unwrap().name, "linear");
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::new(ExperimentKind::Paths);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn deterministic_rerun_is_byte_identical() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Cv);
        cfg.steps = 8;
        cfg.paths = 500;
        let a = execute(&cfg, true).unwrap();
        let b = execute(&cfg, true).unwrap();
        assert_eq!(a.csv, b.csv);
        assert_eq!(a.json, b.json);
        assert_eq!(a.manifest, b.manifest);
        assert!(a.manifest.wall_time_s.is_none());
        assert_eq!(String::from_utf8(a.csv).unwrap().lines().count(), 2);
    }

    #[test]
    fn writes_report_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(ExperimentKind::Paths);
        cfg.steps = 4;
        cfg.paths = 200;
        cfg.out = dir.path().join("run");
        let out = run_experiment(&cfg, false).unwrap();
        assert_eq!(out.status, Status::Pass);
        for f in &out.manifest.files {
            assert!(cfg.out.join(f).exists(), "{f}");
        }
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(cfg.out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest.config_hash, cfg.hash());
        assert!(manifest.wall_time_s.is_some());
    }
}
