use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("input contains no values")]
    Empty,
    #[error("input contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("input contains tied values ({value})")]
    TiesPresent { value: f64 },
    #[error("origin {origin} lies above the first point {first}")]
    OriginAboveFirstPoint { origin: f64, first: f64 },
    #[error("cannot rescale a grid with fewer than two points")]
    DegenerateRange,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("zero gap between points {0} and {1}")]
    ZeroGap(usize, usize),
    #[error("order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },
    #[error("dense reference capped at {cap} points, got {got}")]
    SizeCap { cap: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("solver did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("repetition {repetition} at n = {n} failed: {source}")]
    Repetition { n: usize, repetition: usize, source: Box<Error> },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
