use thiserror::Error;

use crate::workload::JobId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A speed or power value outside the admissible range of a power function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("policy requires clairvoyance: {0}")]
    ClairvoyanceRequired(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("simulation stalled at t={time}: {reason}")]
    Stall { time: f64, reason: String },

    #[error("event limit of {limit} exceeded at t={time}")]
    EventLimit { limit: usize, time: f64 },

    #[error("invalid decision at t={time}: {reason}")]
    InvalidDecision { time: f64, reason: String },

    #[error("workload directive rejected at t={time}: {reason}")]
    Directive { time: f64, reason: String },

    #[error("unknown job {0}")]
    UnknownJob(JobId),

    #[error("infeasible schedule: {0}")]
    Infeasible(String),

    #[error("input mismatch: {0}")]
    Input(String),

    #[error("instance exceeds oracle limits: {0}")]
    SizeLimit(String),

    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
