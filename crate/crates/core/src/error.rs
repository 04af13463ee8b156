use alloc::string::String;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("at least {required} items are required, got {found}")]
    TooFewItems { required: usize, found: usize },
    #[error("item {item} is constant across units; its intercept diverges")]
    DegenerateItem { item: usize },
    #[error("non-finite marginal log-likelihood for unit {unit}")]
    NumericFailure { unit: usize },
    #[error("no unit respondents in the sample")]
    NoRespondents,
    #[error("item {item} has no respondents")]
    EmptyItemRespondents { item: usize },
    #[error("response indicator has a single class; both respondents and nonrespondents are required")]
    SingleClass,
    #[error("matrix already contains the phantom respondent")]
    PhantomPresent,
    #[error("logistic fit did not converge after {iterations} iterations")]
    LogisticDiverged { iterations: usize },
    #[error("response classes remain separated after the configured remedy")]
    SeparationUnresolved,
    #[error("probability at unit {unit} is not in (0, 1]: {value}")]
    InvalidProbability { unit: usize, value: f64 },
    #[error("singular calibration Jacobian (condition estimate {condition:e})")]
    SingularJacobian { condition: f64 },
    #[error("calibration did not converge after {iterations} iterations (residual norm {residual:e})")]
    CalibrationDiverged { iterations: usize, residual: f64 },
    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("correlation matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("{0} is undefined for this input")]
    Undefined(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
