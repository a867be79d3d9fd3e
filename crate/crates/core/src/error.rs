use thiserror::Error;

/// Errors raised by the geometry, flow and monitoring layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FocfError {
    #[error("metric is not positive definite at node ({0}, {1})")]
    NonSpdMetric(usize, usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("fields live on different charts")]
    ChartMismatch,
    #[error("valence {0} exceeds the supported maximum {1}")]
    ValenceOverflow(usize, usize),
    #[error("Calabi conformal factor is not positive at node ({0}, {1})")]
    PotentialDegenerate(usize, usize),
    #[error("time range is empty: {0}")]
    RangeEmpty(String),
    #[error("volume is not positive")]
    VolumeNonPositive,
    #[error("step rejected: {0}")]
    StepRejected(String),
    #[error("trajectory too short: {0} accepted steps")]
    Inconclusive(usize),
    #[error("curvature exceeded the bounded-curvature cap ({0:e} > {1:e})")]
    RequiresBoundedCurvature(f64, f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for FocfError {
    fn from(e: std::io::Error) -> Self {
        FocfError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FocfError>;
