use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure categories, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    InsufficientCandidates,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: {reason}")]
    InvalidValue {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no events")]
    NoEvents,

    #[error("survival estimate never reaches 0.5; median undefined")]
    MedianNotReached,

    #[error("both arms required")]
    SingleArm,

    #[error("subject {0} was never out-of-bag; increase the number of trees")]
    NeverOutOfBag(usize),

    #[error("nuisance `{0}` was not estimated")]
    MissingNuisance(&'static str),

    #[error("insufficient candidate subgroups: {0} candidate(s), at least 2 required")]
    InsufficientCandidates(usize),

    #[error("no complete cases")]
    NoCompleteCases,

    #[error("{cases} complete cases cannot be split into {folds} folds")]
    TooFewForFolds { cases: usize, folds: usize },

    #[error("coordinate descent did not converge at lambda index {lambda_index}")]
    NonConvergence { lambda_index: usize },

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("empty rule: a rule needs at least one condition")]
    EmptyRule,

    #[error("covariate index {index} out of range for {width} columns")]
    CovariateOutOfRange { index: usize, width: usize },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("expression error: {0}")]
    Expression(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::Expression(_) => ErrorKind::Usage,
            Error::InsufficientCandidates(_) => ErrorKind::InsufficientCandidates,
            Error::NonConvergence { .. } | Error::Calibration(_) | Error::MedianNotReached => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }
}
