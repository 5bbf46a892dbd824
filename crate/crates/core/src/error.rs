use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A covariance could not be factorized even after regularization.
    #[error("numeric degeneracy in {0}")]
    NumericDegeneracy(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// There is no posterior mass to resample or sample from.
    #[error("empty posterior: {0}")]
    EmptyPosterior(String),

    /// Importance weights vanished although the fused cardinality is positive.
    #[error("degenerate fusion: importance weights sum to zero but fused cardinality is {0}")]
    DegenerateFusion(f64),

    #[error("sensor network is not connected")]
    Disconnected,

    #[error("invalid configuration: `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("sensor {sensor} at step {step}: {source}")]
    AtSensor {
        sensor: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run}, variant {variant}: {source}")]
    AtRun {
        run: usize,
        variant: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_sensor(self, sensor: usize, step: usize) -> Self {
        Error::AtSensor {
            sensor,
            step,
            source: Box::new(self),
        }
    }
}
