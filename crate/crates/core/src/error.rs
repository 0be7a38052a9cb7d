use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown operator set `{0}` (expected base, soft or hard)")]
    UnknownOperatorSet(String),
    #[error("unknown synthetic benchmark kind `{0}`")]
    UnknownSynthKind(String),
    #[error("invalid task `{0}` (expected regression or binary)")]
    UnknownTask(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column `{0}` not found")]
    MissingTarget(String),
    #[error("column `{column}` has non-numeric value `{value}` at row {row}")]
    NonNumeric {
        column: String,
        value: String,
        row: usize,
    },
    #[error("dataset is empty after dropping {dropped} incomplete rows")]
    Empty { dropped: usize },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("split of {n} rows with test fraction {fraction} leaves an empty side")]
    TooSmall { n: usize, fraction: f64 },
    #[error("test fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("feature `{0}` has zero variance on the training split")]
    ZeroVariance(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("schema mismatch in {file}: {message}")]
    Schema { file: String, message: String },
    #[error("{0}")]
    Other(String),
}

impl DataError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("anchor file is not valid YAML: {0}")]
    Yaml(String),
    #[error("duplicate anchor entry for `{0}`")]
    DuplicateFeature(String),
    #[error("anchor entry `{0}` has no unit")]
    MissingUnit(String),
    #[error("anchor entry `{feature}` has non-numeric anchor `{value}`")]
    NonNumericAnchor { feature: String, value: String },
    #[error("anchor entry `{0}` is not a mapping")]
    BadEntry(String),
}

/// Top-level error for pipeline runs; maps onto process exit codes.
#[derive(Debug, Error)]
pub enum LgoError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Parse(#[from] crate::expr::ParseError),
    #[error("self-check failed: {0}")]
    SelfCheck(String),
}

impl LgoError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LgoError::Config(_) => 2,
            LgoError::Data(_) | LgoError::Anchor(_) | LgoError::Parse(_) => 3,
            LgoError::SelfCheck(_) => 4,
        }
    }
}
