use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty sample")]
    EmptySample,

    #[error("criticality impossible: arrival density at zero is {f0}")]
    CriticalityImpossible { f0: f64 },

    #[error("population exhausted at step {step} (population {population})")]
    PopulationExhausted { step: usize, population: usize },

    #[error("busy period undefined: the queue is empty at time zero")]
    UndefinedBusyPeriod,

    #[error("hitting time undefined: path starts at {start} <= 0")]
    UndefinedHittingTime { start: f64 },

    #[error("argument {x} outside the Airy evaluation domain (x <= {limit})")]
    AiryDomain { x: f64, limit: f64 },

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("outside the asymptotic tail regime: F3'(x) = {derivative} <= 0 at x = {x}")]
    OutsideAsymptoticRegime { x: f64, derivative: f64 },

    #[error("time grid exceeds the recorded path (index {index} > {len})")]
    GridBeyondPath { index: usize, len: usize },

    #[error("time {time} lies beyond the simulated horizon {horizon}")]
    GridBeyondHorizon { time: f64, horizon: f64 },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
