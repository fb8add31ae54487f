use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: row {row}: expected {expected} cells, found {found}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: row {row}: label {value:?} is not 0 or 1")]
    InvalidLabel {
        path: PathBuf,
        row: usize,
        value: String,
    },

    #[error("label column {index} out of range for {columns} columns")]
    LabelColumn { index: usize, columns: usize },

    #[error("dataset has no rows")]
    EmptyDataset,

    #[error("label {0} is not 0 or 1")]
    LabelValue(u8),

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("cannot partition {rows} rows into {clients} clients")]
    TooManyClients { clients: usize, rows: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("train-mode batch needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("feature index {index} out of range for {features} features")]
    FeatureIndex { index: usize, features: usize },

    #[error("feature column {feature} is constant; min-max scaling is undefined")]
    DegenerateColumn { feature: usize },

    #[error("label {0} does not occur in the data")]
    MissingClass(u8),

    #[error("aggregation weights must be non-negative with a positive sum")]
    InvalidWeights,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{scenario}: {source}")]
    Attack {
        scenario: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
