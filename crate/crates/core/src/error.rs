use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("eigenvalue #{index} is {value}, expected a strictly positive value")]
    NonPositiveEigenvalue { index: usize, value: f64 },
    #[error("alpha = {0} is outside [0, 1/2]")]
    AlphaOutOfRange(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("gamma = {0} is outside (0, 1)")]
    GammaOutOfRange(f64),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("kernel is indefinite: eigenvalue {eigenvalue} below -{tolerance}")]
    IndefiniteKernel { eigenvalue: f64, tolerance: f64 },
    #[error("requested {requested} modes but only {available} are available")]
    TooManyModes { requested: usize, available: usize },
    #[error("kernel matrix is not symmetric (max asymmetry {0})")]
    NotSymmetric(f64),
    #[error("map is not nondecreasing at node {0}")]
    NotMonotone(usize),
    #[error("value {value} at node {index} leaves [0, 1]")]
    RangeViolation { index: usize, value: f64 },
    #[error("slope variation {observed} exceeds declared Lipschitz constant {declared}")]
    NotLipschitz { observed: f64, declared: f64 },
    #[error("beta = {beta} is smaller than alpha = {alpha}")]
    BetaTooSmall { beta: f64, alpha: f64 },
    #[error("operation requires alpha = 0, got {0}")]
    AlphaNotZero(f64),
    #[error("operation requires alpha = 1/2, got {0}")]
    AlphaNotHalf(f64),
    #[error("inner drift range is not in H_1/2: norm ratio {0} under truncation refinement")]
    RangeNotH12(f64),
    #[error("directions are not orthonormal (Gram deviation {0})")]
    NotOrthonormal(f64),
    #[error("membership in H_alpha cannot be decided: {0}")]
    MembershipUndecided(String),
    #[error("drift `{0}` has no differential")]
    MissingDifferential(String),
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error("fixed point iteration did not converge after {iterations} iterations (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("time {t} is below one step ({dt})")]
    DegenerateTime { t: f64, dt: f64 },
    #[error("time {t} is not on the step grid (dt = {dt}, horizon = {horizon})")]
    TimeOffGrid { t: f64, dt: f64, horizon: f64 },
    #[error("observable `{kind}` returned {value}, exceeding its declared bound {bound}")]
    ObservableUnbounded { kind: String, value: f64, bound: f64 },
    #[error("direction #{0} is rejected by the H_alpha membership test")]
    DirectionNotInHAlpha(usize),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, found })
    }
}
