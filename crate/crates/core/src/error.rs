use alloc::string::String;

/// Every failure the algorithms can report.
///
/// Each variant has a stable machine-readable name via [`Error::code`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular matrix: {0}")]
    Singularity(String),
    #[error("rank-deficient matrix: {0}")]
    Rank(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("component {0} received no responsibility")]
    EmptyComponent(usize),
    #[error("free energy became non-finite at iteration {iteration}")]
    NumericalDivergence { iteration: usize },
    #[error("did not converge in {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("probability mass underflowed at step {step}: {detail}")]
    Underflow { step: usize, detail: String },
    #[error("enumeration over {bits} binary units exceeds the limit of {limit}")]
    Size { bits: usize, limit: usize },
    #[error("working Hessian is not positive definite at iteration {iteration}")]
    Hessian { iteration: usize },
    #[error("logistic weights diverge: the data are linearly separable (|w| = {norm:e})")]
    Separation { norm: f64 },
}

impl Error {
    /// Stable identifier used in machine-readable error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "DimensionError",
            Error::Singularity(_) => "SingularityError",
            Error::Rank(_) => "RankError",
            Error::Precondition(_) => "PreconditionError",
            Error::InvalidDistribution(_) => "InvalidDistributionError",
            Error::EmptyComponent(_) => "EmptyComponentError",
            Error::NumericalDivergence { .. } => "NumericalDivergenceError",
            Error::Convergence { .. } => "ConvergenceError",
            Error::Underflow { .. } => "UnderflowError",
            Error::Size { .. } => "SizeError",
            Error::Hessian { .. } => "HessianError",
            Error::Separation { .. } => "SeparationError",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(alloc::format!($($arg)*)) };
}
macro_rules! singular {
    ($($arg:tt)*) => { $crate::error::Error::Singularity(alloc::format!($($arg)*)) };
}
pub(crate) use dim_err;
pub(crate) use singular;
