use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite logit at context (question {question_id}, prefix length {prefix_len})")]
    NonFiniteLogit { question_id: u64, prefix_len: usize },

    #[error("dynamic sampling collected {collected} of {wanted} groups after {attempts} attempts")]
    BatchStarvation {
        wanted: usize,
        collected: usize,
        attempts: usize,
    },

    #[error("group has zero reward variance (q = {q})")]
    GroupDegenerate { q: f64 },

    #[error("K = {k} exceeds group size G = {g}")]
    KTooLarge { k: usize, g: usize },

    #[error("response {index} is not a correct response")]
    NotPositiveResponse { index: usize },

    #[error("context has zero entropy; Q vector undefined")]
    ZeroEntropyContext,

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("bad arity: K = {k}, M = {m}, C = {c}")]
    BadArity { k: usize, m: usize, c: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed record at line {line}: {reason}")]
    Record { line: usize, reason: String },

    #[error("training step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// The innermost error, looking through step context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
