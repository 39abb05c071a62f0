use thiserror::Error;

/// Errors raised by the solver and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite coordinate in point {0:?}")]
    NonFinite(Vec<f64>),
    #[error("point at distance {distance} from the domain exceeds tube radius {tube_radius}")]
    TubeExceeded { distance: f64, tube_radius: f64 },
    #[error("time {t} outside horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty measure")]
    EmptyMeasure,
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid arc: {0}")]
    InvalidArc(String),
    #[error("start point is infeasible (signed distance {0})")]
    InfeasibleStart(f64),
    #[error("assumption check failed: {0}")]
    AssumptionViolation(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scenario error at `{path}`: {message}")]
    Scenario { path: String, message: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
