use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// An eigenvalue of the unitary sits on (or next to) the branch cut of
    /// the principal logarithm. Reducing the gate amplitude usually helps.
    #[error("matrix logarithm is ambiguous: eigenvalue {distance:.3e} away from -1")]
    BranchAmbiguity { distance: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("truncation error: reconstructed norm {norm:.6} is below {threshold}")]
    Truncation { norm: f64, threshold: f64 },

    #[error("aliasing: boundary mass {mass:.3e} exceeds {threshold:.1e} after Fourier transform")]
    Aliasing { mass: f64, threshold: f64 },

    #[error("postselection failed at step {step}: no outcome inside the window after {attempts} attempts")]
    PostselectFailure { step: usize, attempts: usize },

    #[error("two-mode dimension {requested} exceeds the configured cap {cap}")]
    MemoryGuard { requested: usize, cap: usize },

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
