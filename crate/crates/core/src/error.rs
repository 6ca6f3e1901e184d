use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("point outside the selection support: {0}")]
    SupportViolation(String),

    #[error("solver did not converge after {sweeps} sweeps (KKT residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("randomized statistic tied with the threshold at coordinate {index}")]
    Tie { index: usize },

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("invalid session graph: {0}")]
    InvalidDag(String),

    #[error("query outcome does not match its spec: {0}")]
    OutcomeMismatch(String),

    #[error("session parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("csv error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error(
        "proposal budget exhausted: {accepted} accepted out of {proposals} proposals \
         (acceptance rate {rate:e})"
    )]
    BudgetExhausted {
        proposals: u64,
        accepted: u64,
        rate: f64,
    },

    #[error("numerical failure: {message}")]
    Numerical { message: String, state: Vec<f64> },

    #[error("nothing selected; inference not defined")]
    EmptySelection,

    #[error(
        "effective sample size {ess:.1} too small after tilting; re-sample at a closer reference"
    )]
    LowEffectiveSampleSize { ess: f64 },

    #[error(
        "pivot is not monotone in the parameter near {at} (jump {jump:e} exceeds {allowed:e})"
    )]
    NonMonotonePivot { at: f64, jump: f64, allowed: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>, state: &[f64]) -> Self {
        Error::Numerical {
            message: msg.into(),
            state: state.to_vec(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
