use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus contains no tokens")]
    EmptyCorpus,

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad parameter: {0}")]
    BadParameter(String),

    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    #[error("bad input: {0}")]
    BadInput(String),

    #[error("bad clustering: {0}")]
    BadClustering(String),

    #[error("word {0} has no association mass")]
    ZeroMassWord(usize),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("exact solver limited to {limit} atoms per side, got {n}x{m}")]
    OracleSizeLimit { n: usize, m: usize, limit: usize },

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate cost matrix: {0}")]
    DegenerateCost(String),

    #[error("out of vocabulary: {0}")]
    Oov(String),

    #[error("sentence has no in-vocabulary words")]
    EmptySentence,

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine name of the variant, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyCorpus => "EmptyCorpus",
            Error::Format(_) => "FormatError",
            Error::Io { .. } => "IoError",
            Error::BadParameter(_) => "BadParameter",
            Error::Index { .. } => "IndexError",
            Error::BadInput(_) => "BadInput",
            Error::BadClustering(_) => "BadClustering",
            Error::ZeroMassWord(_) => "ZeroMassWord",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::OracleSizeLimit { .. } => "OracleSizeLimit",
            Error::NumericalOverflow(_) => "NumericalOverflow",
            Error::Shape(_) => "ShapeError",
            Error::DegenerateCost(_) => "DegenerateCost",
            Error::Oov(_) => "OovError",
            Error::EmptySentence => "EmptySentence",
            Error::DegenerateMetric(_) => "DegenerateMetric",
            Error::Config(_) => "ConfigError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
