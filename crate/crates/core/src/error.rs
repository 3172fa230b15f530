use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("element {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid gain: {0}")]
    Gain(String),

    #[error("invalid delay sampler: {0}")]
    Sampler(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integration failed: {0}")]
    Integration(String),

    /// The run produced a non-finite state. `prefix` holds every tick and
    /// packet recorded before the failure.
    #[error("run diverged at t={at_us}us after {} recorded ticks: {reason}", .prefix.ticks.len())]
    Diverged {
        at_us: u64,
        reason: String,
        prefix: Box<crate::sim::RunTrace>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("trace format error at line {line}: {reason}")]
    TraceFormat { line: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::TraceFormat {
                line,
                reason: format!("{other:?}"),
            },
        }
    }
}
