use thiserror::Error;

/// Errors raised anywhere in the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported composition: {0}")]
    UnsupportedComposition(String),
    #[error("integrand returned a non-finite value at s = {at}")]
    NonFinite { at: f64 },
    #[error("quadrature budget exceeded (estimate {value}, error {error})")]
    BudgetExceeded { value: f64, error: f64 },
    #[error("nesting depth {depth} unsupported (limit {limit})")]
    DepthUnsupported { depth: usize, limit: usize },
    #[error("derivative order unsupported: {0}")]
    OrderUnsupported(String),
    #[error("singular point: {0}")]
    SingularPoint(String),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("integrand decays too slowly: {0}")]
    SlowDecay(String),
    #[error("field mass at grid edge too large: {edge} > {tol}")]
    EdgeMassTooLarge { edge: f64, tol: f64 },
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),
    #[error("grid violates mandatory exclusion region: {0}")]
    RegionViolation(String),
    #[error("CDF is not monotone near x = {at}")]
    NonMonotoneCdf { at: f64 },
    #[error("unknown equation id: {0}")]
    UnknownEquation(String),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::BudgetExceeded { .. }
                | Error::QuadratureFailure(_)
                | Error::SlowDecay(_)
                | Error::EdgeMassTooLarge { .. }
                | Error::NonMonotoneCdf { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
