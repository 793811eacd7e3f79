use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root search failed for 1D eigenmode {mode}: {reason}")]
    RootBracket { mode: usize, reason: String },

    #[error("eigenfunction {mode} is not L2-normalised (norm^2 = {norm_sq})")]
    Normalization { mode: usize, norm_sq: f64 },

    #[error(
        "cannot certify the top {requested} 2D modes from {pairs} 1D pairs \
         (omitted bound {omitted:e} exceeds kept {kept:e}); request more 1D pairs"
    )]
    InsufficientPairs {
        requested: usize,
        pairs: usize,
        omitted: f64,
        kept: f64,
    },

    #[error("parameter vector has {got} modes but the basis only holds {max}")]
    TooManyModes { got: usize, max: usize },

    #[error("point ({x}, {y}) lies outside the unit square")]
    OutsideDomain { x: f64, y: f64 },

    #[error("permeability must be positive and finite, element {element} has {value}")]
    InvalidCoefficient { element: usize, value: f64 },

    #[error("linear solve failed: {reason} (relative residual {residual:e})")]
    Solver { reason: String, residual: f64 },

    #[error("mesh mismatch: expected {expected} nodes, got {got}")]
    MeshMismatch { expected: usize, got: usize },

    #[error("raw step budget of {cap} exhausted after {taken} steps (kept samples per level: {kept:?})")]
    Budget {
        cap: u64,
        taken: u64,
        kept: Vec<usize>,
    },

    #[error("oracle budget exceeded: {0}")]
    OracleBudget(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
