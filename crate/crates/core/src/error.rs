//! Error types shared across the solver crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("unknown unit `{unit}` for field `{field}`")]
    UnknownUnit { field: String, unit: String },

    #[error("price is undefined at x = {x}")]
    PriceDomain { x: f64 },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("grid: {0}")]
    Grid(String),

    #[error("initial density: {0}")]
    InitialDensity(String),

    #[error("forward integration diverged at t = {t}")]
    Diverged { t: f64 },

    #[error("shooting bracket residuals have the same sign ({lo_residual:.6e} at the lower endpoint, {hi_residual:.6e} at the upper)")]
    BracketFailure { lo_residual: f64, hi_residual: f64 },

    #[error("no sign change of the stopping-time residual on (0, {t_end})")]
    RootBracketFailure { t_end: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.6e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("model assumption violated: {0}")]
    AssumptionFailed(String),

    #[error("HJB layer {layer} did not converge after {iterations} iterations (residual {residual:.6e})")]
    LayerNoConvergence {
        layer: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("Riccati denominator vanishes at t = {t}")]
    RiccatiBlowup { t: f64 },

    #[error("degenerate quadratic coefficient a_t = 0 at t = {t}")]
    DegenerateCoefficient { t: f64 },

    #[error("stability violation: the time grid needs at least {required_nt} steps (max transport speed {max_speed:.6e})")]
    CflViolation { required_nt: usize, max_speed: f64 },

    #[error("scheme fault: {0}")]
    SchemeFault(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {last:.6e})")]
    OuterNoConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("domain: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of an iterative method, as opposed to invalid
    /// inputs or I/O problems. CLI callers map these to a distinct exit code.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. }
                | Error::BracketFailure { .. }
                | Error::RootBracketFailure { .. }
                | Error::NoConvergence { .. }
                | Error::LayerNoConvergence { .. }
                | Error::RiccatiBlowup { .. }
                | Error::OuterNoConvergence { .. }
                | Error::SchemeFault(_)
        )
    }
}
