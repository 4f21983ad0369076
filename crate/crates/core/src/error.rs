use thiserror::Error;

/// Errors raised by estimators, simulators and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A simulated path left the admissible range.
    #[error("simulation error: trajectory exploded at step {step} (value {value:e})")]
    Simulation { step: usize, value: f64 },

    /// The density estimate dropped below the positivity floor.
    #[error("positivity floor {floor:e} violated on [{x_min}, {x_max}] ({points} grid points)")]
    PositivityFloor {
        floor: f64,
        x_min: f64,
        x_max: f64,
        points: usize,
    },

    /// A matrix was too ill-conditioned to invert.
    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Config(_) | Error::Parse(_) => 2,
            Error::Simulation { .. } | Error::PositivityFloor { .. } | Error::Conditioning(_) => 3,
            Error::Io(_) | Error::Json(_) => 4,
        }
    }

    /// Short machine-readable class name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Simulation { .. } => "simulation",
            Error::PositivityFloor { .. } => "positivity_floor",
            Error::Conditioning(_) => "conditioning",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
