//! Error type shared by every module of the crate.

use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::domain::WeightVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("universe is empty")]
    EmptyUniverse,
    #[error("duplicate protocol id `{0}`")]
    DuplicateId(String),
    #[error("protocol `{id}` has non-positive score {score}")]
    NonPositiveScore { id: String, score: f64 },
    #[error("protocol `{id}` has negative TVL {tvl}")]
    NegativeTvl { id: String, tvl: f64 },
    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),
    #[error("dates must be strictly increasing; {0} is out of order or repeated")]
    UnorderedDates(NaiveDate),

    #[error("risk matrix is already normalized")]
    AlreadyNormalized,
    #[error("risk matrix is not normalized")]
    NotNormalized,
    #[error("risk matrix has zero norm")]
    ZeroMatrix,
    #[error("risk matrix is not diagonal")]
    NotDiagonal,
    #[error("invalid risk matrix: {0}")]
    InvalidMatrix(String),
    #[error("universe mismatch: expected {expected:?}, got {actual:?}")]
    UniverseMismatch {
        expected: Vec<String>,
        actual: Vec<String>,
    },

    #[error("cannot project an empty vector")]
    EmptyVector,
    #[error("protocol `{0}` has no TVL")]
    MissingTvl(String),
    #[error("total TVL is zero")]
    ZeroTotalTvl,
    #[error("ERC solver did not converge after {iterations} iterations (objective {objective:e})")]
    NotConverged {
        best: WeightVector,
        objective: f64,
        iterations: usize,
    },

    #[error("invalid APY {0}: must be greater than -1")]
    InvalidApy(f64),
    #[error("no active protocols on {0}")]
    NoActiveProtocols(NaiveDate),
    #[error("no FX rate available on {0}")]
    MissingFx(NaiveDate),
    #[error("date ranges differ between ledgers")]
    DateRangeMismatch,
    #[error("invalid backtest configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("duplicate observation for `{id}` on {date}")]
    DuplicateObservation { id: String, date: NaiveDate },
    #[error("non-positive FX rate {0}")]
    NonPositiveRate(f64),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}:{line}: {source}")]
    AtLine {
        path: PathBuf,
        line: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("network error fetching {url}: {message}")]
    Network {
        url: String,
        message: String,
        retryable: bool,
    },
    #[error("{resource} payload from {url}: missing or invalid field `{field}`")]
    Mapping {
        resource: String,
        url: String,
        field: String,
    },

    #[error("ledger is empty")]
    EmptyLedger,
    #[error("monthly rows are not aligned")]
    MonthMisalignment,
    #[error("average risk is zero for month ending {0}")]
    ZeroRisk(NaiveDate),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_line(self, path: impl Into<PathBuf>, line: u64) -> Self {
        Error::AtLine {
            path: path.into(),
            line,
            source: Box::new(self),
        }
    }

    /// The innermost error, with any line-location wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLine { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::NotConverged { .. } => 3,
            Error::Io { .. } | Error::Network { .. } => 4,
            _ => 2,
        }
    }
}
