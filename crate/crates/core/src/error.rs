use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("expected {expected} moves, got {got}")]
    WrongMoveCount { expected: usize, got: usize },

    #[error("capture predicate needs exactly 4 predators, world has {0}")]
    UnsupportedAgentCount(usize),

    #[error("invalid world state: {0}")]
    InvalidState(String),

    #[error("discount must lie in (0, 1), got {0}")]
    InvalidDiscount(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("symbol {symbol} outside vocabulary of size {vocab}")]
    SymbolOutOfRange { symbol: usize, vocab: usize },

    #[error("inference failed: observation at t={0} has zero likelihood under every state")]
    ImpossibleObservation(usize),

    #[error("cost matrix must be square and finite: {0}")]
    InvalidCostMatrix(String),

    #[error("trajectories in a set must share one length: {0}")]
    LengthMismatch(String),

    #[error("empty training data for role {0}")]
    EmptyDataset(usize),

    #[error("horizon schedule is empty")]
    EmptySchedule,

    #[error("demonstration too short: {0}")]
    ShortDemonstration(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round}: non-finite metric `{metric}`")]
    NonFinite { round: usize, metric: &'static str },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        match self {
            e @ (Error::Round { .. } | Error::NonFinite { .. }) => e,
            e => Error::Round {
                round,
                source: Box::new(e),
            },
        }
    }
}
