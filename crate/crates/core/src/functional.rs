//! Functionals of a discrete Brownian path.
//!
//! Random variables, processes and random coefficient functions are all
//! represented as deterministic maps of the path increments. The coupling
//! operator then acts by re-evaluating the same map on `W^phi`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::paths::{Increments, PathView};

/// Measurability tag carried by a functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adaptedness {
    TerminalMeasurable,
    Adapted,
    Predictable,
    /// Progressively measurable only; not transferable as a process.
    Progressive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Scalar,
    Process,
    Coefficient,
}

type ScalarFn = dyn Fn(PathView<'_>) -> f64 + Send + Sync;
/// Writes one value per grid node (`n_steps + 1` entries).
type ProcessFn = dyn Fn(PathView<'_>, &mut [f64]) + Send + Sync;
/// `(path, node index, x) -> h(u_k, x)`.
type CoefficientFn = dyn Fn(PathView<'_>, usize, &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
enum Kind {
    Scalar(Arc<ScalarFn>),
    Process(Arc<ProcessFn>),
    Coefficient { eval: Arc<CoefficientFn>, lipschitz: f64 },
}

#[derive(Clone)]
pub struct PathFunctional {
    name: String,
    tag: Adaptedness,
    kind: Kind,
}

impl fmt::Debug for PathFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PathFunctional")
            .field("name", &self.name)
            .field("arity", &self.arity())
            .field("tag", &self.tag)
            .finish()
    }
}

impl PathFunctional {
    pub fn scalar(name: impl Into<String>, f: impl Fn(PathView<'_>) -> f64 + Send + Sync + 'static) -> Self {
        PathFunctional { name: name.into(), tag: Adaptedness::TerminalMeasurable, kind: Kind::Scalar(Arc::new(f)) }
    }

    pub fn process(
        name: impl Into<String>,
        tag: Adaptedness,
        f: impl Fn(PathView<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        PathFunctional { name: name.into(), tag, kind: Kind::Process(Arc::new(f)) }
    }

    /// Random coefficient `h(u, x)` with declared Lipschitz constant in `x`.
    pub fn coefficient(
        name: impl Into<String>,
        lipschitz: f64,
        f: impl Fn(PathView<'_>, usize, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        PathFunctional {
            name: name.into(),
            tag: Adaptedness::Predictable,
            kind: Kind::Coefficient { eval: Arc::new(f), lipschitz },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tag(&self) -> Adaptedness {
        self.tag
    }

    pub fn arity(&self) -> Arity {
        match self.kind {
            Kind::Scalar(_) => Arity::Scalar,
            Kind::Process(_) => Arity::Process,
            Kind::Coefficient { .. } => Arity::Coefficient,
        }
    }

    pub fn lipschitz(&self) -> Option<f64> {
        match self.kind {
            Kind::Coefficient { lipschitz, .. } => Some(lipschitz),
            _ => None,
        }
    }

    pub(crate) fn expect(&self, arity: Arity) -> Result<()> {
        if self.arity() != arity {
            return Err(Error::Contract(format!(
                "functional '{}' has arity {:?}, expected {:?}",
                self.name,
                self.arity(),
                arity
            )));
        }
        Ok(())
    }

    pub fn eval_scalar(&self, path: PathView<'_>) -> Result<f64> {
        match &self.kind {
            Kind::Scalar(f) => Ok(f(path)),
            _ => Err(self.expect(Arity::Scalar).unwrap_err()),
        }
    }

    pub fn eval_process(&self, path: PathView<'_>, out: &mut [f64]) -> Result<()> {
        match &self.kind {
            Kind::Process(f) => {
                if out.len() != path.n_steps() + 1 {
                    return Err(Error::Dimension(format!(
                        "process output needs {} slots, got {}",
                        path.n_steps() + 1,
                        out.len()
                    )));
                }
                f(path, out);
                Ok(())
            }
            _ => Err(self.expect(Arity::Process).unwrap_err()),
        }
    }

    pub fn eval_coefficient(&self, path: PathView<'_>, node: usize, x: &[f64]) -> Result<f64> {
        match &self.kind {
            Kind::Coefficient { eval, .. } => Ok(eval(path, node, x)),
            _ => Err(self.expect(Arity::Coefficient).unwrap_err()),
        }
    }

    /// Scalar values on every path of a batch.
    pub fn evaluate_all(&self, paths: &Increments) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        let f = match &self.kind {
            Kind::Scalar(f) => f,
            _ => return Err(self.expect(Arity::Scalar).unwrap_err()),
        };
        Ok(paths.paths().map(|p| f(p)).collect())
    }
}

/// Perturb the increments after node `k` and report whether the first `k + 1`
/// node values of a process functional stay unchanged. Predictable
/// functionals may look one node less far ahead than adapted ones, so for
/// them only the first `k` values are compared.
pub fn check_adaptedness<R: Rng>(f: &PathFunctional, path: PathView<'_>, k: usize, rng: &mut R) -> Result<bool> {
    f.expect(Arity::Process)?;
    let n = path.n_steps();
    let mut base = vec![0.0; n + 1];
    f.eval_process(path, &mut base)?;
    let mut incs = path.increments().to_vec();
    let d = path.dim();
    for c in k..n {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            incs[c * d + j] += z;
        }
    }
    let view = PathView::new(path.grid(), d, &incs);
    let mut bumped = vec![0.0; n + 1];
    f.eval_process(view, &mut bumped)?;
    let upto = if f.tag() == Adaptedness::Predictable { k } else { k + 1 };
    Ok(base[..upto.min(n + 1)] == bumped[..upto.min(n + 1)])
}

/// Ready-made functionals used by the experiments and tests.
pub mod library {
    use super::*;

    /// `W_T` (coordinate `j`).
    pub fn terminal_value(j: usize) -> PathFunctional {
        PathFunctional::scalar(format!("W_T[{j}]"), move |p| p.terminal(j))
    }

    /// `W_T^2` (coordinate `j`).
    pub fn terminal_square(j: usize) -> PathFunctional {
        PathFunctional::scalar(format!("W_T[{j}]^2"), move |p| {
            let w = p.terminal(j);
            w * w
        })
    }

    /// `W_t` at the grid node `t` (coordinate 0). Panics at evaluation if `t` is off-grid.
    pub fn value_at(t: f64) -> PathFunctional {
        PathFunctional::scalar(format!("W_{t}"), move |p| {
            let k = p.grid().node_index(t).expect("value_at: time is not a grid node");
            p.value(k, 0)
        })
    }

    pub fn constant(c: f64) -> PathFunctional {
        PathFunctional::scalar(format!("const {c}"), move |_| c)
    }

    /// `u_k -> W_{u_k}` (coordinate `j`).
    pub fn brownian_process(j: usize) -> PathFunctional {
        PathFunctional::process(format!("W[{j}]"), Adaptedness::Adapted, move |p, out| {
            out.copy_from_slice(&p.levels(j));
        })
    }

    /// Running maximum `max_{s <= u_k} W_s` (coordinate `j`).
    pub fn running_max(j: usize) -> PathFunctional {
        PathFunctional::process(format!("max W[{j}]"), Adaptedness::Adapted, move |p, out| {
            let mut m = f64::NEG_INFINITY;
            for (o, w) in out.iter_mut().zip(p.levels(j)) {
                m = m.max(w);
                *o = m;
            }
        })
    }

    pub fn constant_process(c: f64) -> PathFunctional {
        PathFunctional::process(format!("const {c}"), Adaptedness::Predictable, move |_, out| out.fill(c))
    }
}
