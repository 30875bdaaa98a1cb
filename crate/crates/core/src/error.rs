use thiserror::Error;

/// Errors raised by the transport laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies outside the closed unit ball (|x| = {norm})")]
    OutsideDomain { norm: f64 },
    #[error("velocity is not a unit vector (|v| = {norm})")]
    NotUnitVelocity { norm: f64 },
    #[error("unsupported dimension {0}; expected 2 or 3")]
    InvalidDimension(usize),
    #[error("segment endpoints coincide")]
    DegenerateSegment,
    #[error("medium is not subcritical: {0}")]
    NotSubcritical(String),
    #[error("medium is not admissible: {0}")]
    Inadmissible(String),
    #[error("broken path cannot connect entry to exit")]
    NoIntersection,
    #[error(
        "Monte Carlo relative error {achieved:.3e} at order {order} exceeds target {target:.3e}"
    )]
    BudgetExceeded {
        order: usize,
        achieved: f64,
        target: f64,
    },
    #[error("measures live on different sides of the boundary")]
    SideMismatch,
    #[error("perturbed ray left its side of the boundary")]
    SideViolation,
    #[error("non-positive estimate {0}")]
    NonPositiveEstimate(f64),
    #[error("broken-line attenuation {0:.3e} underflows")]
    AttenuationUnderflow(f64),
    #[error("incomplete sinogram: {0}")]
    IncompleteSinogram(String),
    #[error("exponent fit needs positive data")]
    NonPositiveData,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("linear program failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for bad input, 3 for a supercritical medium,
    /// 4 for a numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotSubcritical(_) => 3,
            Error::DegenerateSegment
            | Error::NoIntersection
            | Error::BudgetExceeded { .. }
            | Error::NonPositiveEstimate(_)
            | Error::AttenuationUnderflow(_)
            | Error::NonPositiveData
            | Error::Solver(_) => 4,
            _ => 2,
        }
    }
}
