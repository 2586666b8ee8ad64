use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("treatment column `{column}` has non-binary value {value} at row {row}")]
    NonBinaryTreatment {
        column: String,
        row: usize,
        value: f64,
    },

    #[error("site column `{column}` has non-binary value {value} at row {row}")]
    NonBinarySite {
        column: String,
        row: usize,
        value: f64,
    },

    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },

    #[error("unparseable value `{value}` in column `{column}` at row {row}")]
    BadValue {
        column: String,
        row: usize,
        value: String,
    },

    #[error("no mediator columns declared")]
    EmptyMediatorSet,

    #[error("transported estimation requires a site column (s)")]
    MissingSiteRole,

    #[error("column `{0}` is assigned to more than one role")]
    OverlappingRoles(String),

    #[error("outcome is constant; cannot scale")]
    DegenerateOutcome,

    #[error("fold count {folds} invalid for {n} observations")]
    BadFoldCount { n: usize, folds: usize },

    #[error("no training rows for `{0}` in at least one fold")]
    EmptyTrainingSubset(String),

    #[error("saturated expansion requested on non-binary column {0}")]
    SaturationOnContinuous(usize),

    #[error("saturated expansion over {0} columns is too large")]
    SaturationTooLarge(usize),

    #[error("design arity mismatch: expected {expected} columns, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("unknown learner `{0}`")]
    UnknownLearner(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the contents of a data file rather than by
    /// the run configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::NonBinaryTreatment { .. }
                | Error::NonBinarySite { .. }
                | Error::MissingValue { .. }
                | Error::BadValue { .. }
                | Error::DegenerateOutcome
                | Error::EmptyTrainingSubset(_)
                | Error::Csv(_)
                | Error::Io(_)
        )
    }
}
