use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("instance too large: {0} overflows")]
    Overflow(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (relative deviation {deviation:e})")]
    Asymmetric { deviation: f64 },

    #[error("requested rank {requested} exceeds numerical rank {rank}")]
    RankOverestimate { requested: usize, rank: usize },

    #[error("rank deficient: singular value {index} is {value:e}")]
    RankDeficient { index: usize, value: f64 },

    #[error("LP solver failed: {0}")]
    LpFailure(String),

    #[error("insufficient inliers detected: {found} selected, {needed} needed")]
    InsufficientInliers { found: usize, needed: usize },

    #[error("degenerate spectrum: eigenvalue gap stayed below {floor:e} after {attempts} attempts")]
    DegenerateSpectrum { attempts: usize, floor: f64 },

    #[error("reducible Markov chain")]
    ReducibleChain,

    #[error("resampling budget of {0} attempts exhausted")]
    BudgetExhausted(usize),

    #[error("unresolvable scale: component {index} has scale {value:e}")]
    UnresolvableScale { index: usize, value: f64 },

    #[error("scale ambiguity unresolved: eigenvalue-1 eigenspace is not one-dimensional")]
    ScaleAmbiguity,

    #[error("empty sample set")]
    EmptySamples,
}
