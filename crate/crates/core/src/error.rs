use std::path::PathBuf;

/// Errors raised by the cascade library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("not a probability distribution: {0}")]
    NotADistribution(String),

    #[error("label {label} out of range for {num_labels} labels")]
    LabelOutOfRange { label: usize, num_labels: usize },

    #[error("label space needs at least 2 labels, got {0}")]
    InvalidLabelSpace(usize),

    #[error("miscoverage rate alpha must lie in [0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("violation level delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),

    #[error("score must not be NaN")]
    NanScore,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("gaussian kernel requires a non-empty feature space")]
    EmptyFeatureSpace,

    #[error("invalid kernel bandwidth {0}")]
    InvalidBandwidth(f64),

    #[error("alignment predictor needs at least one training sample")]
    EmptyTrainingSet,

    #[error("alignment feature {0} outside [0, 1]")]
    FeatureOutOfRange(f64),

    #[error("validation set is empty")]
    EmptyValidation,

    #[error("test set is empty")]
    EmptyTest,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("oracle prediction set is empty at position {0}")]
    EmptyOracleSet(usize),

    #[error("true alignment missing for pool item {0}")]
    MissingTrueAlignment(String),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: expected {expected} labels, found {found}")]
    InconsistentK {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: {source}")]
    Validation {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
