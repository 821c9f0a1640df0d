use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported grid: {0}")]
    UnsupportedGrid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("functional contract violated: {0}")]
    Contract(String),

    #[error("unsupported exponent p = {0} (need p >= 2)")]
    UnsupportedExponent(f64),

    #[error("solvability condition fails: {0}")]
    NotSolvable(String),

    #[error("coefficient structure error: {0}")]
    Structural(String),

    #[error("Picard iteration did not converge after {iterations} iterations (last residual {last:.3e})")]
    Divergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("ill-conditioned regression basis: {0}")]
    IllConditioned(String),

    #[error("decoupling field lost regularity at t = {time}: L_w * L_mu3 = {product:.4} >= {threshold}")]
    RegularityLoss {
        time: f64,
        product: f64,
        threshold: f64,
    },

    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
