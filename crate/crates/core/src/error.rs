use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid substitution matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid branching process: {0}")]
    InvalidProcess(String),

    #[error("label alphabets differ ({0} vs {1} labels)")]
    AlphabetMismatch(usize, usize),

    #[error("point {re} + {im}i is not in the upper half-plane")]
    NotInUpperHalfPlane { re: f64, im: f64 },

    #[error("Moebius step denominator vanished")]
    DegenerateDenominator,

    #[error(
        "fixed-point solve did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid eta schedule: {0}")]
    InvalidSchedule(String),

    #[error("tree is too shallow: need depth {needed}, have {actual}")]
    InsufficientDepth { needed: usize, actual: usize },

    #[error("tree would exceed {0} nodes")]
    TreeTooLarge(usize),

    #[error("boundary rule not permitted: {0}")]
    BoundaryRule(String),

    #[error("singular resolvent system at z = {re} + {im}i")]
    SingularSystem { re: f64, im: f64 },

    #[error("dense oracle limited to {cap} nodes, tree has {nodes}")]
    OracleTooLarge { nodes: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("window touches flagged energy {0}")]
    FlaggedWindow(f64),

    #[error("contraction coefficient {kappa} reached 1 at sample {sample}")]
    ContractionViolated { kappa: f64, sample: u64 },

    #[error("power iteration did not converge after {0} steps")]
    PerronNoConvergence(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
