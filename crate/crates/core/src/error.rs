use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("type mismatch at row {row}, column {column}")]
    TypeMismatch { row: usize, column: String },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("missing value at row {row}, column {column}")]
    MissingValue { row: usize, column: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("row index {index} out of range for {n} rows")]
    RowOutOfRange { index: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate partition")]
    DegeneratePartition,
    #[error("k exceeds attribute count (k = {k}, available = {available})")]
    KTooLarge { k: usize, available: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize, theta: Vec<f64> },
    #[error("no key attributes to distill")]
    NoKeyAttributes,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("planted group empty after {0} attempts")]
    EmptyPlantedGroup(usize),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
