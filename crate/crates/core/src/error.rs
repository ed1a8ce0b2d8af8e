use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("grid must be finite and strictly increasing (violated at index {index})")]
    InvalidGrid { index: usize },

    #[error("difference order {order} needs at least {needed} grid points, got {n}")]
    OrderTooHigh { order: usize, n: usize, needed: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("zero pivot at row {row}")]
    SingularMatrix { row: usize },

    #[error("proximal parameter must be positive and finite, got {0}")]
    InvalidLambda(f64),

    #[error("bisection could not bracket the root: F(lo)={f_lo}, F(hi)={f_hi}")]
    BracketError { f_lo: f64, f_hi: f64 },

    #[error(
        "projection solver stopped after {iterations} iterations \
         (primal residual {primal:.3e}, dual residual {dual:.3e})"
    )]
    ConvergenceError { iterations: usize, primal: f64, dual: f64 },

    #[error("log density is not finite ({value}) at the supplied state")]
    NonFiniteDensity { value: f64, state: Vec<f64> },

    #[error("every warmup trajectory diverged")]
    SamplingFailed { last_state: Vec<f64> },

    #[error("convergence diagnostics need at least 2 chains, got {got}")]
    InsufficientChains { got: usize },

    #[error("no observations supplied")]
    EmptyData,

    #[error("no posterior draws supplied")]
    EmptyChains,

    #[error("unknown trend `{0}`")]
    UnknownTrend(String),

    #[error("order k={order} with n={n} grid points needs thinning before fitting (use at most {limit} locations)")]
    ThinningRequired { order: usize, n: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid { .. } => "InvalidGrid",
            Error::OrderTooHigh { .. } => "OrderTooHigh",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::SingularMatrix { .. } => "SingularMatrix",
            Error::InvalidLambda(_) => "InvalidLambda",
            Error::BracketError { .. } => "BracketError",
            Error::ConvergenceError { .. } => "ConvergenceError",
            Error::NonFiniteDensity { .. } => "NonFiniteDensity",
            Error::SamplingFailed { .. } => "SamplingFailed",
            Error::InsufficientChains { .. } => "InsufficientChains",
            Error::EmptyData => "EmptyData",
            Error::EmptyChains => "EmptyChains",
            Error::UnknownTrend(_) => "UnknownTrend",
            Error::ThinningRequired { .. } => "ThinningRequired",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse(_) => "ParseError",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
