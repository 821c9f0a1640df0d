pub mod augmented;
pub mod coupling;
pub mod decoupling;
pub mod error;
pub mod experiment;
pub mod functional;
pub mod grid;
pub mod haar;
pub mod model;
pub mod paths;
pub mod regression;
pub mod regularity;
pub mod rng;
pub mod solvability;
pub mod solver;
pub mod stats;
pub mod variance;

pub use error::{Error, Result};
pub use grid::{CouplingFunction, TimeGrid};
pub use model::{Coefficients, Ctx, Dims, FbsdeSpec, InitialCondition, Lipschitz};
pub use paths::{build_coupled_path, sample_paths, Increments, PathBundle, PathView};
pub use regression::RegressionConfig;
pub use solver::{PicardConfig, SolutionTriple, SolverConfig};
