use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("green quadrature did not reach tolerance {tol:e}: achieved {achieved:e} with {nodes} nodes per axis")]
    ToleranceUnreachable { tol: f64, achieved: f64, nodes: usize },

    #[error("offset {offset:?} lies outside the tabulated green extent {extent}")]
    OutsideGreenTable { offset: Vec<i64>, extent: u32 },

    #[error("{what} has {size} sites, above the dense green cap of {cap}; use a smaller scale N")]
    TooLarge { what: &'static str, size: usize, cap: usize },

    #[error("ill-conditioned green matrix (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("equilibrium measure has a materially negative entry {value:e} at site {site:?}")]
    NegativeEquilibrium { site: Vec<i64>, value: f64 },

    #[error("hitting probability {value} outside [0, 1] beyond slack")]
    HittingProbability { value: f64 },

    #[error("linear solver did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("walk exceeded the step budget of {budget} steps (escape radius {escape_radius})")]
    StepBudget { budget: u64, escape_radius: f64 },

    #[error("exponential moment overflow in Monte Carlo estimator; use a smaller potential")]
    Overflow,

    #[error("unresolved geometry: {0}")]
    UnresolvedGeometry(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
