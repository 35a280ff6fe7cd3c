use thiserror::Error;

/// Errors raised by the reduced-basis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid quality specification: {0}")]
    InvalidQuality(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("full solver did not converge: relative residual {relative_residual:e} > {tolerance:e}")]
    SolverNonConvergence { relative_residual: f64, tolerance: f64 },

    #[error("full matrix is singular at pivot {0}")]
    SingularMatrix(usize),

    #[error("reduced system is singular (degenerate basis with {n} snapshots)")]
    DegenerateBasis { n: usize },

    #[error("snapshot is numerically dependent on the current basis (remaining norm {remaining:e})")]
    DependentSnapshot { remaining: f64 },

    #[error("basis generation did not converge after {iterations} iterations (max residual {max_residual:e})")]
    GenerationNonConvergence { iterations: usize, max_residual: f64 },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("invalid training specification: {0}")]
    InvalidTrainingSpec(String),

    #[error("subspace size {m} out of range 1..={n}")]
    SubspaceOutOfRange { m: usize, n: usize },

    #[error("invalid reordering: {0}")]
    InvalidReordering(String),

    #[error("quality unreachable: residual {residual:e} with all {n} snapshots exceeds {max_res:e}")]
    QualityUnreachable { residual: f64, max_res: f64, n: usize },

    #[error("basis identifier mismatch: basis is {basis}, update expects {expected}")]
    IdentifierMismatch { basis: String, expected: String },

    #[error("unknown basis identifier {0}; resync required")]
    ResyncRequired(String),

    #[error("unknown job {0}")]
    UnknownJob(u64),

    #[error("server channel failure: {0}")]
    Channel(String),

    #[error("no basis available")]
    NoBasis,

    #[error("corrupt basis data: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
