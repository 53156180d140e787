use thiserror::Error;

/// Errors raised by the detection pipeline.
#[derive(Debug, Error)]
pub enum CpdError {
    /// Inconsistent shapes, ranks or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was requested that the current state cannot support.
    #[error("state error: {0}")]
    State(String),

    /// A linear solve or factorization failed.
    #[error("numerical error: {msg} (condition estimate {condition:.3e})")]
    Numerical { msg: String, condition: f64 },

    /// Malformed input data.
    #[error("data error: {0}")]
    Data(String),

    /// A failure inside the engine, tagged with the stream step it happened at.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<CpdError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CpdError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CpdError::Config(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        CpdError::State(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>, condition: f64) -> Self {
        CpdError::Numerical {
            msg: msg.into(),
            condition,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ CpdError::AtStep { .. } => e,
            e => CpdError::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with step tags removed.
    pub fn root(&self) -> &CpdError {
        match self {
            CpdError::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, CpdError>;
