use thiserror::Error;

use crate::matrices::Regime;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid probability triple ({p_left}, {p_one}, {p_two}): {reason}")]
    InvalidTriple {
        p_left: f64,
        p_one: f64,
        p_two: f64,
        reason: String,
    },

    #[error("invalid environment model: {0}")]
    InvalidModel(String),

    #[error("invalid window [{lo}, {hi}]")]
    InvalidWindow { lo: i64, hi: i64 },

    #[error("site {site} lies outside the realized window [{lo}, {hi}]")]
    OutsideWindow { site: i64, lo: i64, hi: i64 },

    #[error("degenerate environment at site {site}: left-step probability is zero")]
    DegenerateEnvironment { site: i64 },

    #[error("step budget of {cap} exhausted at time {time}, position {position}")]
    Truncated { cap: u64, time: u64, position: i64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("model regime is {found:?}, this study requires {required:?}")]
    Regime { found: Regime, required: Regime },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("replica {index} (seed {seed:#018x}) failed: {source}")]
    Replica {
        index: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Short machine-readable tag used in JSON error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidTriple { .. } => "invalid_triple",
            Error::InvalidModel(_) => "invalid_model",
            Error::InvalidWindow { .. } => "invalid_window",
            Error::OutsideWindow { .. } => "outside_window",
            Error::DegenerateEnvironment { .. } => "degenerate_environment",
            Error::Truncated { .. } => "truncated",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InsufficientData(_) => "insufficient_data",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::Regime { .. } => "regime",
            Error::Numerical(_) => "numerical",
            Error::Replica { .. } => "replica",
        }
    }
}
