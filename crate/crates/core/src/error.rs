use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("output {y} lies beyond the truncation bound {y_max}")]
    OutsideTruncation { y: u64, y_max: u64 },

    #[error("distributions have mismatched supports ({left} vs {right} outcomes)")]
    SupportMismatch { left: usize, right: usize },

    #[error("wiretap pair is not degraded: {0}")]
    NotDegraded(String),

    #[error("rate {rate} bits/use is not below capacity {capacity} bits/use")]
    RateAboveCapacity { rate: f64, capacity: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("optimality certificate failed: {0}")]
    CertificationFailed(String),

    #[error("enumeration of {size} outcomes exceeds the budget of {budget}")]
    BudgetExceeded { size: u128, budget: u128 },

    #[error("message {message} out of range (N = {count})")]
    MessageOutOfRange { message: u128, count: u128 },

    #[error("zero output probability for a reachable outcome; truncation too tight")]
    ZeroOutputMass,
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
