use thiserror::Error;

/// Errors produced by model assembly, eigen solution and the two
/// identification stages.
#[derive(Error, Debug)]
pub enum SensidError {
    #[error("invalid model definition: {0}")]
    InvalidDefinition(String),

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("non-physical stiffness: theta[{index}] = {value} <= -1")]
    NonPhysicalStiffness { index: usize, value: f64 },

    #[error("eigen solver failed: {0}")]
    EigenSolver(String),

    #[error("degenerate modes: |lambda_{i} - lambda_{j}| / lambda_{j} < {tol:e}")]
    DegenerateModes { i: usize, j: usize, tol: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mode matching failed for measured mode {mode}: best MAC {mac:.4} < 0.5")]
    ModeMatch { mode: usize, mac: f64 },

    #[error("iteration diverged: {0}")]
    Divergence(String),

    #[error("covariance is not positive semi-definite: min eigenvalue {0:e}")]
    NotPsd(f64),

    #[error("regularization grid undefined: {0}")]
    UndefinedGrid(String),

    #[error("Gaussian process error: {0}")]
    GaussianProcess(String),

    #[error("unknown scenario `{0}` (expected shear10, truss31 or custom)")]
    UnknownScenario(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SensidError>;
