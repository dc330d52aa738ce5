use thiserror::Error;

/// Errors raised by grid construction, operator assembly and the time steppers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite Gamma ratio at {context}")]
    NonFiniteGamma { context: String },

    #[error("imaginary residue {residue:.3e} exceeds {tolerance:.1e} in assembled operator")]
    ImaginaryResidue { residue: f64, tolerance: f64 },

    #[error("ill-conditioned solve: condition estimate {estimate:.3e} above cap {cap:.3e}")]
    IllConditioned { estimate: f64, cap: f64 },

    #[error("singular system matrix")]
    Singular,

    #[error("no convergence after {iterations} iterations: {what}")]
    NoConvergence { iterations: usize, what: String },

    #[error("zero-mode guard: |eps^(2s)/dt - gamma| = {gap:.3e}; choose dt so that eps^(2s)/dt != gamma")]
    ZeroModeGuard { gap: f64 },

    #[error("stability bound violated: dt = {dt:.3e} exceeds {bound:.3e}; use dt <= {bound:.3e}")]
    StabilityBound { dt: f64, bound: f64 },

    #[error("density mismatch between f_in and rho_in: max deviation {deviation:.3e}")]
    DensityMismatch { deviation: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("cache format error: {0}")]
    CacheFormat(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGamma { .. }
                | Error::ImaginaryResidue { .. }
                | Error::IllConditioned { .. }
                | Error::Singular
                | Error::NoConvergence { .. }
                | Error::ZeroModeGuard { .. }
                | Error::StabilityBound { .. }
        )
    }
}
