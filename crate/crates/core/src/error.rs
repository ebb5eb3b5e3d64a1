use thiserror::Error;

/// Errors raised by model validation, simulation and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coefficient `{coefficient}` returned a non-finite value at s={time}, x={state:?}, z={mark:?}")]
    CallbackFailure {
        coefficient: &'static str,
        time: f64,
        state: Vec<f64>,
        mark: Option<f64>,
    },

    #[error("history query at s={requested} outside the recorded range [0, {last}]")]
    OutOfRange { requested: f64, last: f64 },

    #[error("state became non-finite on path {path} at step {step} (t={time})")]
    NonFiniteState { path: u64, step: usize, time: f64 },

    #[error("martingale jump {jump} <= -1 at t={time}; stochastic exponential undefined")]
    JumpBelowFloor { time: f64, jump: f64 },

    #[error("tilt factor 1+phi={value} exceeds thinning envelope {envelope} at t={time}")]
    TiltUnbounded { time: f64, value: f64, envelope: f64 },

    #[error("unknown catalog model `{0}`")]
    UnknownModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
