use std::fmt;

use serde::Serialize;

/// Which check a raw transaction field failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ValidationKind {
    MissingField,
    EmptyToken,
    TimestampMalformed,
    AmountMalformed,
    AmountNotPositive,
    MccMalformed,
    DirectionUnknown,
}

impl fmt::Display for ValidationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValidationKind::MissingField => "missing field",
            ValidationKind::EmptyToken => "empty token",
            ValidationKind::TimestampMalformed => "malformed timestamp",
            ValidationKind::AmountMalformed => "malformed amount",
            ValidationKind::AmountNotPositive => "amount must be positive",
            ValidationKind::MccMalformed => "mcc must be exactly 4 decimal digits",
            ValidationKind::DirectionUnknown => "unknown direction",
        };
        f.write_str(s)
    }
}

/// A field-level validation failure, located by input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("row {row}: field `{field}`: {kind} ({value:?})")]
pub struct ValidationError {
    pub row: usize,
    pub field: &'static str,
    pub kind: ValidationKind,
    pub value: String,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Validation(#[from] ValidationError),

    #[error("transactions belong to more than one account ({first} and {other})")]
    MixedAccounts { first: String, other: String },

    #[error("sequence is empty")]
    EmptySequence,

    #[error("sequence has {len} events, at least {min} required")]
    SequenceTooShort { len: usize, min: usize },

    #[error("window {start}..={end} is empty or too short: {reason}")]
    BadWindow {
        start: String,
        end: String,
        reason: &'static str,
    },

    #[error("cohorts `{0}` and `{1}` overlap")]
    OverlappingCohorts(String, String),

    #[error("account set is empty")]
    EmptyAccountSet,

    #[error("cohort `{0}` is empty")]
    EmptyCohort(String),

    #[error("unknown account `{0}`")]
    UnknownAccount(String),

    #[error("account `{0}` has no events")]
    AccountWithoutEvents(String),

    #[error("need at least {needed} accounts, got {got}")]
    TooFewAccounts { needed: usize, got: usize },

    #[error("sample size {sample} exceeds population of {population}")]
    SampleTooLarge { sample: usize, population: usize },

    #[error("no shared accounts between the two windows")]
    NoSharedAccounts,

    #[error("rank range {min}..={max} holds {got} usable points, at least 3 required")]
    TooFewPoints { min: u32, max: u32, got: usize },

    #[error("zero probability at rank {0} inside the fitted range")]
    ZeroProbabilityInRange(u32),

    #[error("fitted exponent {0} is not positive")]
    NonPositiveExponent(f64),

    #[error("matrix is not row-stochastic: {0}")]
    NonStochastic(String),

    #[error("transition matrix is reducible")]
    ReducibleChain,

    #[error("entropy {entropy} bits is infeasible for {symbols} symbols")]
    InfeasibleEntropy { entropy: f64, symbols: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
