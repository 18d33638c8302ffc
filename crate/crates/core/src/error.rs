use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("aggregation weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{file}: bad magic number {found:#010x} at offset 0 (expected {expected:#010x})")]
    IdxMagic {
        file: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{file}: truncated at offset {offset} ({needed} bytes missing)")]
    IdxTruncated {
        file: PathBuf,
        offset: u64,
        needed: u64,
    },

    #[error("{images}: {image_count} images but {labels}: {label_count} labels")]
    IdxCountMismatch {
        images: PathBuf,
        labels: PathBuf,
        image_count: usize,
        label_count: usize,
    },

    #[error("{file}: {message}")]
    Csv { file: PathBuf, message: String },

    #[error("io error on {file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("attack misconfigured: {0}")]
    AttackConfig(String),

    #[error("KKT solver did not converge (stationarity {stationarity:.3e}, constraint {constraint:.3e})")]
    KktNonConvergence { stationarity: f64, constraint: f64 },
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
