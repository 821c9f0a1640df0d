//! The augmented system over the pair `(W, W')`.
//!
//! For a coupling function `phi` the coupled FBSDE is rewritten over the
//! `2d`-dimensional motion `(W, W')` with state `(x, y, (z1, z2))`:
//!
//! * `Sigma(u, a, x, y, (z1, z2)) = (sqrt(1 - a^2) sigma + A(z1), a sigma + A(z2))`
//! * `b_bar = b(u, x, y, z1 + c(u) z2)`, `f_bar = f(u, x, y, z1 + c(u) z2)`
//!
//! with `c(u) = (1 - sqrt(1 - phi^2)) / phi`. Plugging in
//! `(z1, z2) = (sqrt(1 - phi^2) z, phi z)` recovers `mu = sigma + A` on both
//! blocks and `z1 + c z2 = z`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{augmentation_weight, retained_weight, CouplingFunction, TimeGrid};
use crate::model::{Coefficients, Ctx, Dims, FbsdeSpec, Lipschitz};
use crate::paths::{Increments, PathBundle};

/// `Sigma(u, alpha, x, y, (z1, z2))` written into `out` (`n x 2d`).
pub fn sigma_bar(
    coef: &dyn Coefficients,
    dims: Dims,
    ctx: &Ctx<'_>,
    alpha: f64,
    x: &[f64],
    y: &[f64],
    z1: &[f64],
    z2: &[f64],
    out: &mut [f64],
) {
    let (n, d) = (dims.n, dims.d);
    let keep = retained_weight(alpha);
    let mut s = vec![0.0; n * d];
    let mut a1 = vec![0.0; n * d];
    let mut a2 = vec![0.0; n * d];
    coef.sigma(ctx, x, y, &mut s);
    coef.a_map(ctx, z1, &mut a1);
    coef.a_map(ctx, z2, &mut a2);
    for i in 0..n {
        for j in 0..d {
            out[i * 2 * d + j] = keep * s[i * d + j] + a1[i * d + j];
            out[i * 2 * d + d + j] = alpha * s[i * d + j] + a2[i * d + j];
        }
    }
}

/// Split an augmented `z` (`m x 2d`, row-major) into its two `m x d` blocks.
pub fn split_blocks(z: &[f64], m: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut z1 = Vec::with_capacity(m * d);
    let mut z2 = Vec::with_capacity(m * d);
    for i in 0..m {
        z1.extend_from_slice(&z[i * 2 * d..i * 2 * d + d]);
        z2.extend_from_slice(&z[i * 2 * d + d..(i + 1) * 2 * d]);
    }
    (z1, z2)
}

/// Coefficients of the augmented system. `phi` is tabulated per cell of the
/// driving grid; the coefficient used on cell `k` reads `phi_k`.
pub struct AugmentedCoefficients {
    base: Arc<dyn Coefficients>,
    dims: Dims,
    cells: Vec<f64>,
    /// Base coefficients read the coupled level `W^phi`.
    path_dependent: bool,
}

impl AugmentedCoefficients {
    fn phi(&self, node: usize) -> f64 {
        self.cells.get(node).copied().unwrap_or(0.0)
    }

    fn effective_z(&self, node: usize, z: &[f64]) -> Vec<f64> {
        let c = augmentation_weight(self.phi(node));
        let (z1, z2) = split_blocks(z, self.dims.m, self.dims.d);
        z1.iter().zip(&z2).map(|(a, b)| a + c * b).collect()
    }

    /// `W^phi_{u_k}` rebuilt from the `(W, W')` increments of the context.
    fn coupled_level(&self, ctx: &Ctx<'_>) -> Vec<f64> {
        let d = self.dims.d;
        let mut w = vec![0.0; d];
        for k in 0..ctx.node {
            let phi = self.phi(k);
            let keep = retained_weight(phi);
            for (j, wj) in w.iter_mut().enumerate() {
                *wj += keep * ctx.path.increment(k, j) + phi * ctx.path.increment(k, d + j);
            }
        }
        w
    }

    fn with_base_ctx<R>(&self, ctx: &Ctx<'_>, f: impl FnOnce(&Ctx<'_>) -> R) -> R {
        if self.path_dependent {
            let w = self.coupled_level(ctx);
            f(&Ctx { w: &w, ..*ctx })
        } else {
            f(ctx)
        }
    }
}

impl Coefficients for AugmentedCoefficients {
    fn drift(&self, ctx: &Ctx<'_>, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        let ze = self.effective_z(ctx.node, z);
        self.with_base_ctx(ctx, |c| self.base.drift(c, x, y, &ze, out));
    }

    fn sigma(&self, ctx: &Ctx<'_>, x: &[f64], y: &[f64], out: &mut [f64]) {
        let (n, d) = (self.dims.n, self.dims.d);
        let phi = self.phi(ctx.node);
        let keep = retained_weight(phi);
        let mut s = vec![0.0; n * d];
        self.with_base_ctx(ctx, |c| self.base.sigma(c, x, y, &mut s));
        for i in 0..n {
            for j in 0..d {
                out[i * 2 * d + j] = keep * s[i * d + j];
                out[i * 2 * d + d + j] = phi * s[i * d + j];
            }
        }
    }

    fn a_map(&self, ctx: &Ctx<'_>, z: &[f64], out: &mut [f64]) {
        let (n, m, d) = (self.dims.n, self.dims.m, self.dims.d);
        let (z1, z2) = split_blocks(z, m, d);
        let mut a1 = vec![0.0; n * d];
        let mut a2 = vec![0.0; n * d];
        self.with_base_ctx(ctx, |c| {
            self.base.a_map(c, &z1, &mut a1);
            self.base.a_map(c, &z2, &mut a2);
        });
        for i in 0..n {
            out[i * 2 * d..i * 2 * d + d].copy_from_slice(&a1[i * d..(i + 1) * d]);
            out[i * 2 * d + d..(i + 1) * 2 * d].copy_from_slice(&a2[i * d..(i + 1) * d]);
        }
    }

    fn generator(&self, ctx: &Ctx<'_>, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        let ze = self.effective_z(ctx.node, z);
        self.with_base_ctx(ctx, |c| self.base.generator(c, x, y, &ze, out));
    }

    fn terminal(&self, ctx: &Ctx<'_>, x: &[f64], out: &mut [f64]) {
        self.with_base_ctx(ctx, |c| self.base.terminal(c, x, out));
    }

    fn has_generator(&self) -> bool {
        self.base.has_generator()
    }
}

/// Build the augmented spec over `(W, W')` for `phi` tabulated on `grid`.
///
/// Base coefficients that read the path see the coupled level `W^phi` in
/// `ctx.w`; their `ctx.path` is the `2d`-dimensional pair path.
pub fn build_augmented_system(spec: &FbsdeSpec, phi: &CouplingFunction, grid: &TimeGrid) -> Result<FbsdeSpec> {
    if !spec.coefficients.has_split() {
        return Err(Error::Structural(format!(
            "spec '{}' does not provide the sigma + A split",
            spec.name
        )));
    }
    let cells = phi.cell_values(grid)?;
    let l = spec.lipschitz;
    let r2 = std::f64::consts::SQRT_2;
    let lipschitz = Lipschitz {
        b: [l.b[0], l.b[1], r2 * l.b[2]],
        mu: l.mu,
        f: [l.f[0], l.f[1], r2 * l.f[2]],
        g: l.g,
    };
    let dims = Dims { d: 2 * spec.dims.d, ..spec.dims };
    let coef = AugmentedCoefficients {
        base: spec.coefficients.clone(),
        dims: spec.dims,
        cells,
        path_dependent: spec.path_dependent,
    };
    FbsdeSpec::new(
        format!("augmented {}", spec.name),
        dims,
        lipschitz,
        spec.initial.clone(),
        Arc::new(coef),
        spec.path_dependent,
    )
}

/// Increments of the pair `(W, W')` as one `2d`-dimensional driver.
pub fn pair_driver(bundle: &PathBundle) -> Increments {
    let (n, d) = (bundle.grid().n_steps(), bundle.dim());
    let mut data = Vec::with_capacity(bundle.n_paths() * n * 2 * d);
    for p in 0..bundle.n_paths() {
        let (a, b) = (bundle.w().path(p), bundle.w_prime().path(p));
        for k in 0..n {
            data.extend((0..d).map(|j| a.increment(k, j)));
            data.extend((0..d).map(|j| b.increment(k, j)));
        }
    }
    Increments::from_vec(*bundle.grid(), 2 * d, bundle.n_paths(), data).expect("pair driver shape")
}

/// Both sides of
/// `|(z,0) - (sqrt(1-phi^2) zp, phi zp)|^2 = (1 - sqrt(1-phi^2))(|zp|^2 + |z|^2) + sqrt(1-phi^2)|zp - z|^2`.
pub fn z_gap_identity(z: &[f64], zp: &[f64], phi: f64) -> (f64, f64) {
    let keep = retained_weight(phi);
    let lhs: f64 = z.iter().zip(zp).map(|(a, b)| (a - keep * b).powi(2) + (phi * b).powi(2)).sum();
    let nz: f64 = z.iter().map(|v| v * v).sum();
    let nzp: f64 = zp.iter().map(|v| v * v).sum();
    let gap: f64 = z.iter().zip(zp).map(|(a, b)| (b - a).powi(2)).sum();
    (lhs, (1.0 - keep) * (nzp + nz) + keep * gap)
}

/// Largest absolute deviation in
/// `Sigma(alpha, (sqrt(1-alpha^2) z, alpha z)) = (sqrt(1-alpha^2) mu, alpha mu)`.
pub fn representation_residual(spec: &FbsdeSpec, ctx: &Ctx<'_>, alpha: f64, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
    let dims = spec.dims;
    let (n, d) = (dims.n, dims.d);
    let keep = retained_weight(alpha);
    let z1: Vec<f64> = z.iter().map(|v| keep * v).collect();
    let z2: Vec<f64> = z.iter().map(|v| alpha * v).collect();
    let mut big = vec![0.0; n * 2 * d];
    sigma_bar(spec.coefficients.as_ref(), dims, ctx, alpha, x, y, &z1, &z2, &mut big);
    let mut mu = vec![0.0; n * d];
    spec.coefficients.diffusion(ctx, x, y, z, &mut mu);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..d {
            worst = worst.max((big[i * 2 * d + j] - keep * mu[i * d + j]).abs());
            worst = worst.max((big[i * 2 * d + d + j] - alpha * mu[i * d + j]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_structure, LinearCoefficients, TrigCoefficients};
    use crate::paths::sample_paths;
    use crate::rng::{stream_rng, Lane};
    use rand::Rng;

    #[test]
    fn identity_and_lower_bounds_hold() {
        let mut rng = stream_rng(5, 0, Lane::Auxiliary, 0, 0);
        for _ in 0..1000 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let zp: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let phi: f64 = rng.gen();
            let (l, r) = z_gap_identity(&z, &zp, phi);
            assert!((l - r).abs() <= 1e-12 * l.max(1.0));
            let gap: f64 = z.iter().zip(&zp).map(|(a, b)| (a - b).powi(2)).sum();
            let nz: f64 = z.iter().map(|v| v * v).sum();
            assert!(l >= gap / 2.0 - 1e-12);
            assert!(l >= (1.0 - retained_weight(phi)) * nz - 1e-12);
        }
    }

    #[test]
    fn representation_property() {
        let g = TimeGrid::unit(1.0, 4).unwrap();
        let b = sample_paths(&g, 1, 1, 1, 0).unwrap();
        let spec = TrigCoefficients::default().into_spec(0.0).unwrap();
        let ctx = Ctx { u: 0.5, node: 2, w: &[], path: b.w().path(0) };
        let mut rng = stream_rng(6, 0, Lane::Auxiliary, 0, 0);
        for _ in 0..1000 {
            let alpha: f64 = rng.gen();
            let (x, y, z) = ([rng.gen_range(-2.0..2.0)], [rng.gen_range(-2.0..2.0)], [rng.gen_range(-2.0..2.0)]);
            assert!(representation_residual(&spec, &ctx, alpha, &x, &y, &z) <= 1e-12);
        }
    }

    #[test]
    fn augmented_lipschitz_bounds() {
        let g = TimeGrid::unit(1.0, 4).unwrap();
        let pair = sample_paths(&g, 1, 2, 1, 0).unwrap();
        let driver = pair_driver(&pair);
        let mut lin = LinearCoefficients::zero(1);
        lin.bz = vec![0.8];
        lin.fz = vec![-0.6];
        lin.a = 0.5;
        lin.s0 = vec![1.0];
        lin.gx = 0.5;
        let spec = lin.into_spec(0.0).unwrap();
        let aug = build_augmented_system(&spec, &CouplingFunction::constant(0.7), &g).unwrap();
        assert_eq!(aug.dims.d, 2);
        let r = check_structure(&aug, driver.path(0), 1, 1000, 4);
        assert!(r.linearity_residual <= 1e-12);
        assert_eq!(r.lipschitz_excess, 0.0);
    }
}
