use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} is not a prime >= 3")]
    NotPrime(usize),

    #[error("symmetric group degree {0} is outside 2..=6")]
    DegreeOutOfRange(usize),

    #[error("irreducible representations are only built for symmetric groups; analyse cyclic groups with the spectra module")]
    UnsupportedKind,

    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid class weighting: {0}")]
    InvalidWeighting(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("negativity condition fails on classes {classes:?} (sums {sums:?})")]
    HypothesisViolated { classes: Vec<String>, sums: Vec<f64> },

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("training diverged at step {step}")]
    Diverged { step: usize, trace: Box<crate::trainer::TrainTrace> },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
