use std::fmt;

use thiserror::Error;

use crate::data::Target;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("covariate dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no {target} events{}", fold_suffix(*.fold))]
    NoEvents { target: Target, fold: Option<usize> },

    #[error("fold {fold}: {reason}")]
    Fold { fold: usize, reason: String },

    #[error("cannot stratify {n} subjects into {k} folds: {reason}; try a smaller k")]
    InfeasibleFolds { n: usize, k: usize, reason: String },

    #[error("risk set is empty at t = {time}")]
    ZeroRiskSet { time: f64 },

    #[error("singular information ({0})")]
    Singular(String),

    #[error("{estimator} did not converge: {detail}")]
    NonConvergence { estimator: String, detail: String },

    #[error("{what} is not positive ({value}); variance is not identified")]
    NonPositive { what: &'static str, value: f64 },

    #[error("{failed} of {total} bootstrap resamples failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("all {replications} replications failed for estimator {estimator}")]
    AllReplicationsFailed {
        estimator: String,
        replications: usize,
    },

    #[error("csv row {row}: {message}")]
    CsvRow { row: usize, message: String },

    #[error("csv schema: missing column `{0}`")]
    MissingColumn(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error comes from an estimation routine failing to converge
    /// or to produce a usable estimate (as opposed to bad input).
    pub fn is_estimation_failure(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Singular(_)
                | Error::ZeroRiskSet { .. }
                | Error::NonPositive { .. }
                | Error::BootstrapFailures { .. }
                | Error::AllReplicationsFailed { .. }
        )
    }
}

struct FoldSuffix(Option<usize>);

impl fmt::Display for FoldSuffix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(m) => write!(f, " in the training sample of fold {m}"),
            None => Ok(()),
        }
    }
}

fn fold_suffix(fold: Option<usize>) -> FoldSuffix {
    FoldSuffix(fold)
}
