use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("group order must be at least 1")]
    ZeroOrder,
    #[error("invalid group table: {0}")]
    InvalidGroup(String),
    #[error("group of order {0} is not cyclic")]
    NotCyclic(usize),
    #[error("irrep list is incomplete: sum of d^2/e is {got}, group order is {order}")]
    IncompleteIrreps { got: f64, order: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid representation spec `{0}`")]
    RepSpec(String),
    #[error("grid side must be odd, got {0}")]
    EvenSide(usize),
    #[error("probability {0} outside [0, 1)")]
    Probability(f64),
    #[error("index {index} out of range (size {size})")]
    OutOfRange { index: usize, size: usize },
    #[error("group of order {0} does not act on this environment")]
    UnsupportedGroup(usize),
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
    #[error("operation requires a tabular environment")]
    NotTabular,
    #[error("operation requires a deterministic environment")]
    Stochastic,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value during {phase}")]
    NonFinite { phase: String, dump: String },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
