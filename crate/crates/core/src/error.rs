//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),

    #[error("factorization failure: {0}")]
    FactorizationFailure(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("non-finite estimate: {0}")]
    NonFiniteEstimate(String),

    #[error("degenerate hypotheses: d_n^2(f0, f1) = 0")]
    DegenerateHypotheses,

    #[error("insufficient grid: need at least {needed} points, got {got}")]
    InsufficientGrid { needed: usize, got: usize },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("weights are not normalized (sum = {0})")]
    UnnormalizedWeights(f64),

    #[error("model index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("too many pieces: m = {m} exceeds n = {n}")]
    TooManyPieces { m: usize, n: usize },

    #[error("support too large: s = {s} exceeds p = {p}")]
    SupportTooLarge { s: usize, p: usize },

    #[error("SVD failed to converge")]
    SvdFailure,

    #[error("state space too large: {states} states exceed the limit of {limit}")]
    StateSpaceTooLarge { states: u128, limit: u128 },

    #[error("non-finite log posterior at initialization: {0}")]
    NonFiniteLogPosterior(String),

    #[error("empty chain")]
    EmptyChain,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-positive risk at grid point {0}")]
    NonPositiveRisk(usize),

    #[error("cell n = {n}, replication {replication} failed after retries: {msg}")]
    CellFailed {
        n: usize,
        replication: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidConfig(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
