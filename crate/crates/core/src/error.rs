use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid response distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid problem instance: {0}")]
    InvalidInstance(String),

    #[error("invalid distribution over crowds: {0}")]
    InvalidMixture(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("crowd {crowd} has not been sampled")]
    NoData { crowd: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("round {round} is past the horizon {horizon}")]
    PastHorizon { round: u64, horizon: u64 },

    #[error("no crowd has a positive gap")]
    NoInformation,

    #[error("horizon {horizon} absorbs only {absorbed:.6} of the probability mass")]
    HorizonTooShort { horizon: u64, absorbed: f64 },

    #[error("nothing to write")]
    EmptyRecords,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
