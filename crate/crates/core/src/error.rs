use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("tail truncation failed at tilt {tilt}: {reason}")]
    TailTruncation { tilt: f64, reason: String },
    #[error("mass saturated at the tail decay rate {rate}; the boundary equation has no root")]
    Saturated { rate: f64 },
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("series box needs {required_mb} MiB, above the {cap_mb} MiB memory cap")]
    BoxTooLarge { required_mb: u64, cap_mb: u64 },
    #[error("quadrature did not reach tolerance {tol:e} (estimate {estimate:e}); try n_grid >= {suggested_grid}")]
    QuadratureUnresolved {
        tol: f64,
        estimate: f64,
        suggested_grid: usize,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("oracles disagree at x = {x:?}: {first} vs {second}")]
    OracleMismatch { x: Vec<i64>, first: f64, second: f64 },
    #[error("io: {0}")]
    Io(String),
    #[error("json: {0}")]
    Json(String),
}

impl Error {
    /// True for errors caused by caller input rather than by a numerical solver.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::UnknownKernel(_)
                | Error::InvalidKernel(_)
                | Error::Precondition(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }

    /// Short machine-readable tag used in diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::UnknownKernel(_) => "unknown_kernel",
            Error::InvalidKernel(_) => "invalid_kernel",
            Error::TailTruncation { .. } => "tail_truncation",
            Error::Saturated { .. } => "saturated",
            Error::NoConvergence { .. } => "no_convergence",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::BoxTooLarge { .. } => "box_too_large",
            Error::QuadratureUnresolved { .. } => "quadrature_unresolved",
            Error::Precondition(_) => "precondition",
            Error::OracleMismatch { .. } => "oracle_mismatch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
