use thiserror::Error;

/// Errors surfaced by lattice operations, sampling and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fields live on different lattices")]
    LatticeMismatch,

    #[error("non-finite value in input field")]
    NonFiniteInput,

    #[error("mollifier radius {eps} under-resolved on spacing {h} (need eps >= 2h)")]
    UnderResolvedMollifier { eps: f64, h: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e}); history: {tail:?}")]
    SolverDiverged {
        iterations: usize,
        residual: f64,
        tail: Vec<f64>,
    },

    #[error("conjugate gradient failed to converge ({0} iterations)")]
    CgStalled(usize),

    #[error("{0}")]
    Precondition(String),

    #[error("decay fit rejected: {0}")]
    FitRejected(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed field file: {0}")]
    MalformedField(String),
}

pub type Result<T> = std::result::Result<T, Error>;
