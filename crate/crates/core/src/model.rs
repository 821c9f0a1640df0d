//! Coefficient packs for coupled FBSDEs with diffusion split `mu = sigma + A`,
//! `A` linear in `z`.
//!
//! Shapes: `x` in R^n, `y` in R^m, `z` in R^{m x d} (row-major), diffusion
//! outputs in R^{n x d} (row-major).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::PathFunctional;
use crate::paths::PathView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

impl Dims {
    pub const SCALAR: Dims = Dims { n: 1, m: 1, d: 1 };

    pub fn z_len(&self) -> usize {
        self.m * self.d
    }

    pub fn diffusion_len(&self) -> usize {
        self.n * self.d
    }
}

/// Evaluation context handed to coefficients: time, node of the driving grid,
/// the driving path and `W_u` at that node. `w` is empty for specs that
/// declare no path dependence.
#[derive(Clone, Copy)]
pub struct Ctx<'a> {
    pub u: f64,
    pub node: usize,
    pub w: &'a [f64],
    pub path: PathView<'a>,
}

pub trait Coefficients: Send + Sync {
    fn drift(&self, ctx: &Ctx<'_>, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]);

    /// `sigma(u, x, y)`.
    fn sigma(&self, ctx: &Ctx<'_>, x: &[f64], y: &[f64], out: &mut [f64]);

    /// `A(u, z)`; must be linear in `z`.
    fn a_map(&self, ctx: &Ctx<'_>, z: &[f64], out: &mut [f64]);

    fn generator(&self, ctx: &Ctx<'_>, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]);

    fn terminal(&self, ctx: &Ctx<'_>, x: &[f64], out: &mut [f64]);

    /// `mu = sigma + A`.
    fn diffusion(&self, ctx: &Ctx<'_>, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        self.sigma(ctx, x, y, out);
        let mut a = vec![0.0; out.len()];
        self.a_map(ctx, z, &mut a);
        for (o, ai) in out.iter_mut().zip(a) {
            *o += ai;
        }
    }

    /// Whether `sigma` and `A` are available separately.
    fn has_split(&self) -> bool {
        true
    }

    /// `false` lets the solver skip the generator regression.
    fn has_generator(&self) -> bool {
        true
    }
}

/// Lipschitz constants `L_{b,i}`, `L_{mu,i}`, `L_{f,i}` (in x, y, z) and `L_g`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Lipschitz {
    pub b: [f64; 3],
    pub mu: [f64; 3],
    pub f: [f64; 3],
    pub g: f64,
}

#[derive(Clone)]
pub enum InitialCondition {
    Fixed(Vec<f64>),
    /// One state per path, `n_paths x n` row-major.
    PerPath(Arc<Vec<f64>>),
    /// One scalar functional per component, evaluated on the path strictly
    /// before the solve window.
    Functional(Vec<PathFunctional>),
}

impl fmt::Debug for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialCondition::Fixed(x) => write!(f, "Fixed({x:?})"),
            InitialCondition::PerPath(v) => write!(f, "PerPath({} values)", v.len()),
            InitialCondition::Functional(fs) => write!(f, "Functional({fs:?})"),
        }
    }
}

#[derive(Clone)]
pub struct FbsdeSpec {
    pub name: String,
    pub dims: Dims,
    pub lipschitz: Lipschitz,
    pub initial: InitialCondition,
    pub coefficients: Arc<dyn Coefficients>,
    /// Coefficients read the driving path (random coefficients).
    pub path_dependent: bool,
}

impl fmt::Debug for FbsdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FbsdeSpec")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("lipschitz", &self.lipschitz)
            .field("initial", &self.initial)
            .field("path_dependent", &self.path_dependent)
            .finish()
    }
}

impl FbsdeSpec {
    pub fn new(
        name: impl Into<String>,
        dims: Dims,
        lipschitz: Lipschitz,
        initial: InitialCondition,
        coefficients: Arc<dyn Coefficients>,
        path_dependent: bool,
    ) -> Result<Self> {
        if dims.n == 0 || dims.m == 0 || dims.d == 0 {
            return Err(Error::config("FBSDE dimensions must be positive"));
        }
        if let InitialCondition::Fixed(x) = &initial {
            if x.len() != dims.n {
                return Err(Error::Dimension(format!("initial state has {} entries, n = {}", x.len(), dims.n)));
            }
        }
        Ok(FbsdeSpec { name: name.into(), dims, lipschitz, initial, coefficients, path_dependent })
    }

    pub fn with_initial(&self, initial: InitialCondition) -> Self {
        FbsdeSpec { initial, ..self.clone() }
    }

    /// Deterministic coefficients and a deterministic initial state.
    pub fn is_deterministic(&self) -> bool {
        !self.path_dependent && matches!(self.initial, InitialCondition::Fixed(_))
    }
}

/// Affine scalar coefficients (`n = m = 1`, `d >= 1`):
/// `b = bx x + by y + <bz, z> + b0`, `sigma_j = sx x + sy y + s0_j`,
/// `A(z)_j = a z_j`, `f = fx x + fy y + <fz, z> + f0`, `g = gx x + g0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCoefficients {
    pub bx: f64,
    pub by: f64,
    pub bz: Vec<f64>,
    pub b0: f64,
    pub sx: f64,
    pub sy: f64,
    pub s0: Vec<f64>,
    pub a: f64,
    pub fx: f64,
    pub fy: f64,
    pub fz: Vec<f64>,
    pub f0: f64,
    pub gx: f64,
    pub g0: f64,
}

impl LinearCoefficients {
    pub fn zero(d: usize) -> Self {
        LinearCoefficients {
            bx: 0.0,
            by: 0.0,
            bz: vec![0.0; d],
            b0: 0.0,
            sx: 0.0,
            sy: 0.0,
            s0: vec![0.0; d],
            a: 0.0,
            fx: 0.0,
            fy: 0.0,
            fz: vec![0.0; d],
            f0: 0.0,
            gx: 0.0,
            g0: 0.0,
        }
    }

    /// `dX = dW`, `Y_T = X_T`: the martingale oracle with `Y = X = W`, `Z = 1`.
    pub fn martingale() -> Self {
        LinearCoefficients { s0: vec![1.0], gx: 1.0, ..Self::zero(1) }
    }

    pub fn d(&self) -> usize {
        self.s0.len()
    }

    pub fn lipschitz(&self) -> Lipschitz {
        let d = self.d() as f64;
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Lipschitz {
            b: [self.bx.abs(), self.by.abs(), norm(&self.bz)],
            mu: [self.sx.abs() * d.sqrt(), self.sy.abs() * d.sqrt(), self.a.abs()],
            f: [self.fx.abs(), self.fy.abs(), norm(&self.fz)],
            g: self.gx.abs(),
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.d();
        if d == 0 || self.bz.len() != d || self.fz.len() != d {
            return Err(Error::Dimension("linear coefficients need bz, s0, fz of equal length d >= 1".into()));
        }
        Ok(())
    }

    pub fn into_spec(self, x0: f64) -> Result<FbsdeSpec> {
        self.validate()?;
        let d = self.d();
        let lip = self.lipschitz();
        FbsdeSpec::new(
            "linear",
            Dims { n: 1, m: 1, d },
            lip,
            InitialCondition::Fixed(vec![x0]),
            Arc::new(self),
            false,
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Coefficients for LinearCoefficients {
    fn drift(&self, _: &Ctx<'_>, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        out[0] = self.bx * x[0] + self.by * y[0] + dot(&self.bz, z) + self.b0;
    }

    fn sigma(&self, _: &Ctx<'_>, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (o, s0) in out.iter_mut().zip(&self.s0) {
            *o = self.sx * x[0] + self.sy * y[0] + s0;
        }
    }

    fn a_map(&self, _: &Ctx<'_>, z: &[f64], out: &mut [f64]) {
        for (o, zj) in out.iter_mut().zip(z) {
            *o = self.a * zj;
        }
    }

    fn generator(&self, _: &Ctx<'_>, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        out[0] = self.fx * x[0] + self.fy * y[0] + dot(&self.fz, z) + self.f0;
    }

    fn terminal(&self, _: &Ctx<'_>, x: &[f64], out: &mut [f64]) {
        out[0] = self.gx * x[0] + self.g0;
    }

    fn has_generator(&self) -> bool {
        self.fx != 0.0 || self.fy != 0.0 || self.f0 != 0.0 || self.fz.iter().any(|&v| v != 0.0)
    }
}

/// Linear coefficients perturbed by terms driven by the first Brownian
/// coordinate: `b += kb W_u`, `sigma += ks sin(W_u)`, `f += kf W_u`,
/// `g += kg W_T`. Lipschitz constants in the state are those of the linear part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRandomCoefficients {
    pub linear: LinearCoefficients,
    pub kb: f64,
    pub ks: f64,
    pub kf: f64,
    pub kg: f64,
}

impl AffineRandomCoefficients {
    pub fn into_spec(self, x0: f64) -> Result<FbsdeSpec> {
        self.linear.validate()?;
        let d = self.linear.d();
        let lip = self.linear.lipschitz();
        FbsdeSpec::new(
            "affine_random",
            Dims { n: 1, m: 1, d },
            lip,
            InitialCondition::Fixed(vec![x0]),
            Arc::new(self),
            true,
        )
    }
}

impl Coefficients for AffineRandomCoefficients {
    fn drift(&self, ctx: &Ctx<'_>, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        self.linear.drift(ctx, x, y, z, out);
        out[0] += self.kb * ctx.w[0];
    }

    fn sigma(&self, ctx: &Ctx<'_>, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.linear.sigma(ctx, x, y, out);
        let shift = self.ks * ctx.w[0].sin();
        for o in out.iter_mut() {
            *o += shift;
        }
    }

    fn a_map(&self, ctx: &Ctx<'_>, z: &[f64], out: &mut [f64]) {
        self.linear.a_map(ctx, z, out);
    }

    fn generator(&self, ctx: &Ctx<'_>, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        self.linear.generator(ctx, x, y, z, out);
        out[0] += self.kf * ctx.w[0];
    }

    fn terminal(&self, ctx: &Ctx<'_>, x: &[f64], out: &mut [f64]) {
        self.linear.terminal(ctx, x, out);
        out[0] += self.kg * ctx.w[0];
    }
}

/// Bounded smooth deterministic coefficients (`n = m = d = 1`):
/// `b = beta sin x`, `sigma = s0 + s1 cos y`, `A(z) = a z`,
/// `f = lambda cos x + rho sin y`, `g = gamma sin x + g0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigCoefficients {
    pub beta: f64,
    pub s0: f64,
    pub s1: f64,
    pub a: f64,
    pub lambda: f64,
    pub rho: f64,
    pub gamma: f64,
    pub g0: f64,
}

impl Default for TrigCoefficients {
    fn default() -> Self {
        TrigCoefficients { beta: 0.5, s0: 1.0, s1: 0.2, a: 0.2, lambda: 0.5, rho: 0.3, gamma: 0.8, g0: 0.0 }
    }
}

impl TrigCoefficients {
    pub fn lipschitz(&self) -> Lipschitz {
        Lipschitz {
            b: [self.beta.abs(), 0.0, 0.0],
            mu: [0.0, self.s1.abs(), self.a.abs()],
            f: [self.lambda.abs(), self.rho.abs(), 0.0],
            g: self.gamma.abs(),
        }
    }

    pub fn into_spec(self, x0: f64) -> Result<FbsdeSpec> {
        let lip = self.lipschitz();
        FbsdeSpec::new("trig", Dims::SCALAR, lip, InitialCondition::Fixed(vec![x0]), Arc::new(self), false)
    }
}

impl Coefficients for TrigCoefficients {
    fn drift(&self, _: &Ctx<'_>, x: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) {
        out[0] = self.beta * x[0].sin();
    }

    fn sigma(&self, _: &Ctx<'_>, _: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = self.s0 + self.s1 * y[0].cos();
    }

    fn a_map(&self, _: &Ctx<'_>, z: &[f64], out: &mut [f64]) {
        out[0] = self.a * z[0];
    }

    fn generator(&self, _: &Ctx<'_>, x: &[f64], y: &[f64], _: &[f64], out: &mut [f64]) {
        out[0] = self.lambda * x[0].cos() + self.rho * y[0].sin();
    }

    fn terminal(&self, _: &Ctx<'_>, x: &[f64], out: &mut [f64]) {
        out[0] = self.gamma * x[0].sin() + self.g0;
    }
}

/// Results of sampling-based structural checks on a coefficient pack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureReport {
    /// Largest `|A(a z1 + b z2) - a A(z1) - b A(z2)|`.
    pub linearity_residual: f64,
    /// Largest violation of a declared Lipschitz bound (0 when none).
    pub lipschitz_excess: f64,
}

/// Probe `A`-linearity and the declared Lipschitz constants of `b`, `mu`, `f`
/// and `g` on `n_samples` random argument pairs at node `node` of `path`.
pub fn check_structure(spec: &FbsdeSpec, path: PathView<'_>, node: usize, n_samples: usize, seed: u64) -> StructureReport {
    use rand::Rng;
    use rand_distr::StandardNormal;

    let dims = spec.dims;
    let c = &spec.coefficients;
    let mut rng = crate::rng::stream_rng(seed, 0, crate::rng::Lane::Auxiliary, 0, 0);
    let draw = |len: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..len).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let w = if spec.path_dependent {
        (0..dims.d).map(|j| path.value(node, j)).collect()
    } else {
        Vec::new()
    };
    let ctx = Ctx { u: path.grid().node(node), node, w: &w, path };
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let lip = spec.lipschitz;
    let mut linearity: f64 = 0.0;
    let mut excess: f64 = 0.0;
    for _ in 0..n_samples {
        let (z1, z2) = (draw(dims.z_len(), &mut rng), draw(dims.z_len(), &mut rng));
        let (al, be): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let comb: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| al * a + be * b).collect();
        let (mut a1, mut a2, mut ac) =
            (vec![0.0; dims.diffusion_len()], vec![0.0; dims.diffusion_len()], vec![0.0; dims.diffusion_len()]);
        c.a_map(&ctx, &z1, &mut a1);
        c.a_map(&ctx, &z2, &mut a2);
        c.a_map(&ctx, &comb, &mut ac);
        for i in 0..ac.len() {
            linearity = linearity.max((ac[i] - al * a1[i] - be * a2[i]).abs());
        }

        let (x, x2) = (draw(dims.n, &mut rng), draw(dims.n, &mut rng));
        let (y, y2) = (draw(dims.m, &mut rng), draw(dims.m, &mut rng));
        let (dx, dy, dz) = (dist(&x, &x2), dist(&y, &y2), dist(&z1, &z2));
        let mut check = |out1: &[f64], out2: &[f64], l: [f64; 3]| {
            let bound = l[0] * dx + l[1] * dy + l[2] * dz;
            excess = excess.max(dist(out1, out2) - bound * (1.0 + 1e-9) - 1e-12);
        };
        let (mut o1, mut o2) = (vec![0.0; dims.n], vec![0.0; dims.n]);
        c.drift(&ctx, &x, &y, &z1, &mut o1);
        c.drift(&ctx, &x2, &y2, &z2, &mut o2);
        check(&o1, &o2, lip.b);
        let (mut m1, mut m2) = (vec![0.0; dims.diffusion_len()], vec![0.0; dims.diffusion_len()]);
        c.diffusion(&ctx, &x, &y, &z1, &mut m1);
        c.diffusion(&ctx, &x2, &y2, &z2, &mut m2);
        check(&m1, &m2, lip.mu);
        let (mut f1, mut f2) = (vec![0.0; dims.m], vec![0.0; dims.m]);
        c.generator(&ctx, &x, &y, &z1, &mut f1);
        c.generator(&ctx, &x2, &y2, &z2, &mut f2);
        check(&f1, &f2, lip.f);
        let (mut g1, mut g2) = (vec![0.0; dims.m], vec![0.0; dims.m]);
        c.terminal(&ctx, &x, &mut g1);
        c.terminal(&ctx, &x2, &mut g2);
        check(&g1, &g2, [lip.g, 0.0, 0.0]);
    }
    StructureReport { linearity_residual: linearity, lipschitz_excess: excess.max(0.0) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::paths::sample_paths;

    #[test]
    fn builtin_packs_respect_declared_structure() {
        let g = TimeGrid::unit(1.0, 8).unwrap();
        let b = sample_paths(&g, 2, 4, 1, 0).unwrap();
        let b1 = sample_paths(&g, 1, 4, 1, 0).unwrap();
        let mut lin = LinearCoefficients::zero(2);
        lin.bx = 0.3;
        lin.by = -0.2;
        lin.bz = vec![0.1, 0.4];
        lin.sx = 0.5;
        lin.s0 = vec![1.0, 0.5];
        lin.a = 0.7;
        lin.fy = 0.3;
        lin.fz = vec![0.2, -0.2];
        lin.gx = 0.9;
        let specs = [
            (lin.clone().into_spec(1.0).unwrap(), &b),
            (TrigCoefficients::default().into_spec(0.0).unwrap(), &b1),
            (
                AffineRandomCoefficients { linear: LinearCoefficients::martingale(), kb: 0.5, ks: 0.3, kf: 1.0, kg: 0.2 }
                    .into_spec(0.0)
                    .unwrap(),
                &b1,
            ),
        ];
        for (spec, bundle) in specs {
            let r = check_structure(&spec, bundle.w().path(0), 4, 1000, 3);
            assert!(r.linearity_residual <= 1e-12, "{}: {r:?}", spec.name);
            assert_eq!(r.lipschitz_excess, 0.0, "{}: {r:?}", spec.name);
        }
    }

    #[test]
    fn understated_lipschitz_is_caught() {
        let g = TimeGrid::unit(1.0, 4).unwrap();
        let b = sample_paths(&g, 1, 1, 1, 0).unwrap();
        let mut spec = TrigCoefficients::default().into_spec(0.0).unwrap();
        spec.lipschitz.g = 0.1;
        let r = check_structure(&spec, b.w().path(0), 0, 500, 3);
        assert!(r.lipschitz_excess > 0.0);
    }

    #[test]
    fn fixed_initial_dimension_checked() {
        let lin = LinearCoefficients::martingale();
        let r = FbsdeSpec::new(
            "bad",
            Dims::SCALAR,
            lin.lipschitz(),
            InitialCondition::Fixed(vec![0.0, 1.0]),
            Arc::new(lin),
            false,
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
