use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("unknown class label {0:?}")]
    UnknownClass(String),
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("distribution sums to {0}, expected 1")]
    BadSum(f64),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("message {index}: missing or invalid key {key:?}")]
    Schema { key: &'static str, index: usize },
    #[error("message {index}: unparseable date {value:?}")]
    Date { index: usize, value: String },
    #[error("subject {0}: history has no messages")]
    EmptyHistory(String),
    #[error("subject {0}: d_* columns do not form a distribution summing to 1")]
    Distribution(String),
    #[error("subject {subject_id}: unknown c_label {value:?}")]
    Enum { subject_id: String, value: String },
    #[error("duplicate subject_id {0}")]
    Duplicate(String),
    #[error("subject {subject_id}: invalid {column} value {value:?}")]
    LabelValue {
        subject_id: String,
        column: &'static str,
        value: String,
    },
    #[error("label CSV header lacks column {0:?}")]
    MissingColumn(&'static str),
    #[error("subject {subject_id}: no value for {column} in any label file")]
    IncompleteLabels {
        subject_id: String,
        column: &'static str,
    },
    #[error("CSV record {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<CorpusError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    pub(crate) fn in_file(self, path: &std::path::Path) -> CorpusError {
        CorpusError::File {
            path: path.display().to_string(),
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not positive definite (pivot {pivot})")]
    Singular { pivot: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in input")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction and gold lengths differ ({pred} vs {gold})")]
    Length { pred: usize, gold: usize },
    #[error("empty input")]
    Empty,
    #[error("k = {k} exceeds the {n} ranked subjects")]
    K { k: usize, n: usize },
    #[error("no decision trace for subject {0}")]
    MissingTrace(String),
    #[error("no gold label for subject {0}")]
    MissingGold(String),
    #[error("invalid trace for subject {subject_id}: {reason}")]
    InvalidTrace { subject_id: String, reason: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no label for subject {0}")]
    MissingLabel(String),
    #[error("validation fraction {0} must lie strictly between 0 and 1")]
    Fraction(f64),
    #[error("no subjects to split")]
    Empty,
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: vector has {got} values, header declares {expected}")]
    Dimension {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: duplicate record for subject {subject_id} round {round:?}")]
    Duplicate {
        line: usize,
        subject_id: String,
        round: Option<usize>,
    },
    #[error("line {line}: non-finite vector component")]
    NonFinite { line: usize },
    #[error("no embedding for subject {subject_id} round {round:?}")]
    Missing {
        subject_id: String,
        round: Option<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("round {round}, subject {subject_id}: {message}")]
    RoundAbort {
        round: usize,
        subject_id: String,
        message: String,
    },
    #[error("protocol violation: {message} (line: {line:?})")]
    Protocol { message: String, line: String },
    #[error("peer reported error: {0}")]
    Remote(String),
    #[error("connection closed before the session finished")]
    Closed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
