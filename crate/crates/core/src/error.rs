use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("state leaves the domain x1 > 0 (x1 = {x1})")]
    DomainViolation { x1: f64 },

    #[error("control bounds must satisfy u1 >= 1 and u2 >= 1 (got u1 = {u1}, u2 = {u2})")]
    InvalidBounds { u1: f64, u2: f64 },

    #[error("gamma must exceed 1 (got {0})")]
    InvalidGamma(f64),

    #[error("no next switching point along this arc (x2/x1 = {ratio})")]
    NoNextSwitching { ratio: f64 },

    #[error("invalid time or step: {0}")]
    InvalidStep(String),

    #[error("inconsistent schedule: {0}")]
    InvalidSchedule(String),

    #[error("grid too narrow: {0}")]
    GridSpan(String),

    #[error("wavefunctions live on different grids")]
    GridMismatch,

    #[error("wavepacket reached the grid boundary (probability {probability:.3e} at t = {t})")]
    BoundaryLeak { probability: f64, t: f64 },
}
