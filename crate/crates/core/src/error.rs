use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("primary label `{0}` does not occur in the source column")]
    PrimaryAbsent(String),

    #[error("source `{label}` lacks both arms ({treated} treated, {control} control)")]
    Positivity {
        label: String,
        treated: usize,
        control: usize,
    },

    #[error("unknown source `{0}`")]
    UnknownSource(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("compliance term requested but the dataset carries no compliance column")]
    NoCompliance,

    #[error("degenerate outcome: range is zero")]
    DegenerateOutcome,

    #[error("singular design: columns {columns:?} are linearly dependent on earlier columns")]
    SingularDesign { columns: Vec<String> },

    #[error("degenerate fit: least-squares residual variance is zero")]
    DegenerateFit,

    #[error("numerical failure in {0}")]
    Numerical(String),

    #[error("column mismatch: expected {expected} columns, found {found}")]
    ColumnMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{module}: pattern {pattern}, block {block}: {source}")]
    Block {
        module: &'static str,
        pattern: String,
        block: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{failures} of {reps} replications failed for {estimator} at delta = {delta} (limit 5%)")]
    TooManyFailures {
        estimator: String,
        delta: f64,
        failures: usize,
        reps: usize,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
