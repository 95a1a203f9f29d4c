use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("argument {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("leapfrog unstable: h^2 m = {product} >= 4 (h = {h}, m = {m})")]
    Unstable { h: f64, m: f64, product: f64 },

    #[error("time {time} is not on the grid of step {h}")]
    GridViolation { time: f64, h: f64 },

    #[error("orbit length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("integration-time law incompatible with flow: {0}")]
    IncompatibleLaw(String),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
