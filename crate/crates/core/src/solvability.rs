//! Solvability gate and empirical choice of the small-interval length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FbsdeSpec;
use crate::paths::Increments;
use crate::solver::{solve_on_window, SolverConfig, Terminal};

/// Burkholder-Davis-Gundy constants `(K_lower, K_upper)` for exponent `p`:
/// `K_lower E(int|G|^2)^{p/2} <= E sup|int G dW|^p <= K_upper E(int|G|^2)^{p/2}`.
///
/// No default is provided. Sharp values are known only in special cases;
/// see e.g. Burkholder (1973) and Davis (1976) for admissible choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdgConstants {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvabilityVerdict {
    pub p: f64,
    /// `L_g * L_mu3`.
    pub product: f64,
    /// Left-hand side of the condition (equals `product` when `p = 2`).
    pub expression: f64,
    pub pass: bool,
    /// Filled in by [`recommend_delta`]; `None` until probed.
    pub recommended_delta: Option<f64>,
}

/// `p`-condition with `l_g` in place of the terminal Lipschitz constant.
pub fn condition_value(l_g: f64, l_mu3: f64, p: f64, bdg: Option<BdgConstants>) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(Error::UnsupportedExponent(p));
    }
    let product = l_g * l_mu3;
    if p == 2.0 {
        return Ok(product);
    }
    let k = bdg.ok_or_else(|| Error::config(format!("p = {p} > 2 needs BDG constants")))?;
    if !(k.lower > 0.0 && k.upper > 0.0) {
        return Err(Error::config("BDG constants must be positive"));
    }
    let factor = k.upper.powf(1.0 / p) * (p / (p - 1.0) + 2.0 * k.lower.powf(-1.0 / p) * (2.0 * p - 1.0) / (p - 1.0));
    Ok(factor * product)
}

pub fn check_solvability(spec: &FbsdeSpec, p: f64, bdg: Option<BdgConstants>) -> Result<SolvabilityVerdict> {
    verdict_for(spec.lipschitz.g, spec.lipschitz.mu[2], p, bdg)
}

/// Verdict with an arbitrary terminal Lipschitz constant (e.g. a field's `L_w`).
pub fn verdict_for(l_g: f64, l_mu3: f64, p: f64, bdg: Option<BdgConstants>) -> Result<SolvabilityVerdict> {
    let expression = condition_value(l_g, l_mu3, p, bdg)?;
    Ok(SolvabilityVerdict { p, product: l_g * l_mu3, expression, pass: expression < 1.0, recommended_delta: None })
}

/// Largest window length `len` (halving from the full remaining horizon)
/// whose Picard residuals contract with every ratio below `0.5`, starting at
/// node `k0` of `driver`. Returns the length in time units.
pub fn recommend_delta(spec: &FbsdeSpec, driver: &Increments, k0: usize, cfg: &SolverConfig) -> Result<f64> {
    let grid = *driver.grid();
    let mut len = grid.n_steps().checked_sub(k0).filter(|&l| l > 0).ok_or_else(|| {
        Error::config(format!("start node {k0} leaves no room on a grid of {} steps", grid.n_steps()))
    })?;
    let probe_cfg = SolverConfig {
        picard: crate::solver::PicardConfig { max_interval: None, ..cfg.picard },
        ..*cfg
    };
    loop {
        match solve_on_window(spec, driver, k0, k0 + len, &spec.initial, Terminal::Spec, &probe_cfg) {
            Ok(sol) if sol.trace().max_ratio().map_or(true, |r| r < 0.5) => {
                return Ok(len as f64 * grid.step());
            }
            Ok(_) | Err(Error::Divergence { .. }) => {}
            Err(e) => return Err(e),
        }
        if len == 1 {
            return Err(Error::NotSolvable("no grid window contracts with ratio below 0.5".into()));
        }
        len /= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p2_condition_is_strict() {
        assert!(verdict_for(0.5, 1.5, 2.0, None).unwrap().pass);
        let edge = verdict_for(1.0, 1.0, 2.0, None).unwrap();
        assert_eq!(edge.product, 1.0);
        assert!(!edge.pass);
        assert!(verdict_for(1e6, 0.0, 2.0, None).unwrap().pass);
    }

    #[test]
    fn exponent_and_bdg_requirements() {
        assert!(matches!(verdict_for(0.1, 0.1, 1.5, None), Err(Error::UnsupportedExponent(_))));
        assert!(matches!(verdict_for(0.1, 0.1, 4.0, None), Err(Error::Config(_))));
        let k = BdgConstants { lower: 0.25, upper: 4.0 };
        let v = verdict_for(0.1, 0.1, 4.0, Some(k)).unwrap();
        let expect = 4f64.powf(0.25) * (4.0 / 3.0 + 2.0 * 0.25f64.powf(-0.25) * 7.0 / 3.0) * 0.01;
        assert!((v.expression - expect).abs() < 1e-15);
        assert!(v.pass);
    }
}
