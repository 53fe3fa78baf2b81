use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ion index {index} out of range for a string of {count} ions")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("positions must be strictly increasing and at least {min_gap:e} apart (violated at index {index})")]
    Unordered { index: usize, min_gap: f64 },

    #[error("position {x} lies outside the domain [{lo}, {hi}]")]
    OutsideDomain { x: f64, lo: f64, hi: f64 },

    #[error("dimension mismatch: cannot convert {from} to {to}")]
    DimensionMismatch { from: &'static str, to: &'static str },

    #[error("potential is not confining: {0}")]
    NotConfining(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate pair: |delta_a - delta_b| = {difference:e} V is below the minimum {minimum:e} V")]
    DegeneratePair { difference: f64, minimum: f64 },

    #[error("background voltages differ at electrode {electrode}: {a} V vs {b} V")]
    BackgroundMismatch { electrode: usize, a: f64, b: f64 },

    #[error("curves do not overlap")]
    NoOverlap,

    #[error("segment overlap graph is disconnected; component intervals: {components:?}")]
    DisconnectedOverlap { components: Vec<(f64, f64)> },

    #[error("no peaks found above the detection threshold")]
    NoPeaks,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
