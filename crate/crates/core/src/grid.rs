//! Time discretization and coupling functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition `u_0 < u_1 < ... < u_n` of `[t_start, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::config("time grid needs at least one step"));
        }
        if !(t_start.is_finite() && t_end.is_finite()) || t_start >= t_end {
            return Err(Error::config(format!(
                "time grid needs t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        Ok(TimeGrid { t_start, t_end, n_steps })
    }

    /// Grid on `[0, horizon]`.
    pub fn unit(horizon: f64, n_steps: usize) -> Result<Self> {
        TimeGrid::new(0.0, horizon, n_steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn length(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    /// Node `u_k`; the last node is exactly `t_end`.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        if k == self.n_steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.node(k)).collect()
    }

    /// Index of the node equal to `t` (up to rounding), if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let pos = (t - self.t_start) / self.step();
        let k = pos.round();
        let tol = 1e-9 * self.n_steps as f64;
        if k < 0.0 || k > self.n_steps as f64 || (pos - k).abs() > tol {
            return None;
        }
        Some(k as usize)
    }

    pub fn require_node(&self, t: f64) -> Result<usize> {
        self.node_index(t).ok_or_else(|| {
            Error::config(format!(
                "time {t} is not a node of the grid [{}, {}] / {}",
                self.t_start, self.t_end, self.n_steps
            ))
        })
    }

    pub fn is_dyadic(&self) -> bool {
        self.n_steps.is_power_of_two()
    }

    /// Grid over nodes `k0..=k1` of `self`.
    pub fn subgrid(&self, k0: usize, k1: usize) -> Result<TimeGrid> {
        if k0 >= k1 || k1 > self.n_steps {
            return Err(Error::config(format!("invalid node window [{k0}, {k1}]")));
        }
        TimeGrid::new(self.node(k0), self.node(k1), k1 - k0)
    }
}

/// Coupling function `phi: [t_start, t_end] -> [0, 1]`.
///
/// Evaluated once per grid cell `(u_k, u_{k+1}]` at the right endpoint, so an
/// indicator of `(a, c]` with grid-node endpoints is represented exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingFunction {
    Constant(f64),
    Indicator { a: f64, c: f64 },
    /// One value per grid cell.
    Tabulated(Vec<f64>),
}

impl CouplingFunction {
    pub fn constant(r: f64) -> Self {
        CouplingFunction::Constant(r)
    }

    pub fn indicator(a: f64, c: f64) -> Self {
        CouplingFunction::Indicator { a, c }
    }

    pub fn is_identically_zero(&self) -> bool {
        match self {
            CouplingFunction::Constant(r) => *r == 0.0,
            CouplingFunction::Indicator { .. } => false,
            CouplingFunction::Tabulated(v) => v.iter().all(|&x| x == 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        match self {
            CouplingFunction::Constant(r) if !in_range(*r) => {
                Err(Error::Domain(format!("coupling value {r} outside [0, 1]")))
            }
            CouplingFunction::Indicator { a, c } if !(a < c) => {
                Err(Error::config(format!("indicator needs a < c, got ({a}, {c}]")))
            }
            CouplingFunction::Tabulated(v) => match v.iter().find(|x| !in_range(**x)) {
                Some(bad) => Err(Error::Domain(format!("coupling value {bad} outside [0, 1]"))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Per-cell values on `grid` (cell `k` is `(u_k, u_{k+1}]`).
    pub fn cell_values(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        self.validate()?;
        let n = grid.n_steps();
        match self {
            CouplingFunction::Constant(r) => Ok(vec![*r; n]),
            CouplingFunction::Indicator { a, c } => {
                if *a < grid.t_start() || *c > grid.t_end() {
                    return Err(Error::config(format!(
                        "indicator ({a}, {c}] not inside [{}, {}]",
                        grid.t_start(),
                        grid.t_end()
                    )));
                }
                let ka = grid.require_node(*a)?;
                let kc = grid.require_node(*c)?;
                Ok((0..n).map(|k| if k >= ka && k < kc { 1.0 } else { 0.0 }).collect())
            }
            CouplingFunction::Tabulated(v) => {
                if v.len() != n {
                    return Err(Error::Dimension(format!(
                        "tabulated coupling has {} values, grid has {n} cells",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }

    /// `int phi(u)^2 du` over the grid cells `k0..k1`.
    pub fn energy(cells: &[f64], step: f64, k0: usize, k1: usize) -> f64 {
        cells[k0..k1].iter().map(|p| p * p * step).sum()
    }
}

/// `c(u) = (1 - sqrt(1 - phi^2)) / phi` on `{phi != 0}` and `0` elsewhere,
/// evaluated in the cancellation-free form `phi / (1 + sqrt(1 - phi^2))`.
pub fn augmentation_weight(phi: f64) -> f64 {
    if phi == 0.0 {
        0.0
    } else {
        phi / (1.0 + (1.0 - phi * phi).max(0.0).sqrt())
    }
}

/// `sqrt(1 - phi^2)`, the weight kept on the original motion.
#[inline]
pub fn retained_weight(phi: f64) -> f64 {
    (1.0 - phi * phi).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_invariants() {
        let g = TimeGrid::new(0.5, 2.0, 7).unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes[0], 0.5);
        assert_eq!(*nodes.last().unwrap(), 2.0);
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        assert!((g.step() * 7.0 - 1.5).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(matches!(TimeGrid::new(0.0, 1.0, 0), Err(Error::Config(_))));
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(2.0, 1.0, 4).is_err());
    }

    #[test]
    fn node_lookup() {
        let g = TimeGrid::unit(1.0, 4).unwrap();
        assert_eq!(g.node_index(0.25), Some(1));
        assert_eq!(g.node_index(0.75), Some(3));
        assert_eq!(g.node_index(0.3), None);
        assert_eq!(g.node_index(1.5), None);
    }

    #[test]
    fn indicator_cells_are_left_open() {
        let g = TimeGrid::unit(1.0, 4).unwrap();
        let v = CouplingFunction::indicator(0.25, 0.75).cell_values(&g).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn indicator_endpoints_must_be_nodes() {
        let g = TimeGrid::unit(1.0, 4).unwrap();
        assert!(CouplingFunction::indicator(0.3, 0.75).cell_values(&g).is_err());
        assert!(CouplingFunction::indicator(0.75, 0.25).cell_values(&g).is_err());
    }

    #[test]
    fn out_of_range_values_are_domain_errors() {
        let g = TimeGrid::unit(1.0, 2).unwrap();
        assert!(matches!(CouplingFunction::constant(1.2).cell_values(&g), Err(Error::Domain(_))));
        assert!(matches!(
            CouplingFunction::Tabulated(vec![0.5, -0.1]).cell_values(&g),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn augmentation_weight_bounds() {
        for i in 0..=100 {
            let phi = i as f64 / 100.0;
            let c = augmentation_weight(phi);
            assert!(c >= 0.0 && c <= phi + 1e-15);
            if phi > 0.0 {
                let direct = (1.0 - (1.0 - phi * phi).sqrt()) / phi;
                assert!((c - direct).abs() < 1e-12);
            }
        }
        assert_eq!(augmentation_weight(0.0), 0.0);
        assert_eq!(augmentation_weight(1.0), 1.0);
    }
}
