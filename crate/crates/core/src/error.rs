use thiserror::Error;

/// Errors produced by the estimation, simulation and harness layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicaError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sample too small: {0}")]
    SampleTooSmall(String),

    #[error("degenerate denominator ({which} factor {value:e} <= {floor:e})")]
    DegenerateDenominator {
        which: &'static str,
        value: f64,
        floor: f64,
    },

    #[error("degenerate projection: component {0} is constant")]
    DegenerateProjection(usize),

    #[error("matrix is not orthogonal (max deviation {0:e})")]
    NotOrthogonal(f64),

    #[error("singular system in Cayley step; reduce the step size")]
    SingularStep,

    #[error("rank deficient covariance (min eigenvalue {0:e})")]
    RankDeficient(f64),

    #[error("invalid group structure: {0}")]
    InvalidGroups(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{failed} of {total} replications failed")]
    TooManyFailures { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, MicaError>;
