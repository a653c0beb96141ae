//! Descriptor labels for multi-task regression, label normalization, and
//! circular fingerprints.

mod descriptors;
mod ecfp;
mod normalize;

pub use descriptors::{
    compute_descriptors, descriptors_for_smiles, read_descriptor_csv, write_descriptor_csv,
    DescriptorVector, BASELINE_DESCRIPTORS,
};
pub use ecfp::{ecfp, fnv1a_words, jaccard_distance, Fingerprint};
pub use normalize::NormStats;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeaturizeError {
    #[error(transparent)]
    Chem(#[from] crate::chem::ChemError),
    #[error("normalizer needs at least two rows, got {0}")]
    TooFewRows(usize),
    #[error("row {row} has {got} columns, expected {expected}")]
    Width {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("fingerprint sizes differ: {0} vs {1}")]
    MismatchedBits(usize, usize),
    #[error("fingerprint size {0} is not a power of two")]
    BadBitCount(usize),
    #[error("unknown descriptor '{0}'")]
    UnknownDescriptor(String),
    #[error("non-finite value in column {0}")]
    NonFinite(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for FeaturizeError {
    fn from(e: csv::Error) -> Self {
        FeaturizeError::Csv(e.to_string())
    }
}
