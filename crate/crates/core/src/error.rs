use alloc::string::String;
use core::fmt;

use crate::checkpoint::CheckpointError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of the function.
    Domain(String),
    /// Invalid hyperparameters or engine configuration.
    Config(String),
    /// The mode search for the auxiliary variable did not converge.
    Convergence { last: f64, iterations: usize },
    /// Slice sampling could not bracket the density.
    SliceOverflow { steps: usize },
    EmptyDocument,
    /// A document references a word id outside the vocabulary.
    Vocabulary { word: u32, vocab_size: usize },
    /// Stored contributions disagree with cluster statistics.
    Ledger(String),
    Checkpoint(CheckpointError),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Convergence { last, iterations } => write!(
                f,
                "auxiliary variable search did not converge after {iterations} iterations (last iterate u = {last})"
            ),
            Error::SliceOverflow { steps } => {
                write!(f, "slice sampler failed to bracket the density after {steps} steps")
            }
            Error::EmptyDocument => write!(f, "document has no words"),
            Error::Vocabulary { word, vocab_size } => {
                write!(f, "word id {word} outside vocabulary of size {vocab_size}")
            }
            Error::Ledger(msg) => write!(f, "contribution ledger corrupted: {msg}"),
            Error::Checkpoint(e) => write!(f, "checkpoint: {e}"),
        }
    }
}

impl core::error::Error for Error {}

impl From<CheckpointError> for Error {
    fn from(e: CheckpointError) -> Self {
        Error::Checkpoint(e)
    }
}

impl Error {
    /// True for failures of the numerical routines (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Convergence { .. } | Error::SliceOverflow { .. })
    }
}
