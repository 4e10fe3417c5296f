use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// [`Error::is_config`] separates configuration/validation failures from
/// runtime failures so the CLI can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: malformed header: expected {expected:?}, got {got:?}")]
    MalformedHeader {
        file: String,
        expected: Vec<String>,
        got: Vec<String>,
    },

    #[error("{file}: {rejected} of {total} rows rejected (limit is 10%); first reasons: {sample}")]
    ExcessiveRejections {
        file: String,
        rejected: u64,
        total: u64,
        sample: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("generator spec rejected: {0}")]
    SpecRejected(String),

    #[error("cohort {0:?} selected no cases")]
    EmptyCohort(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("relative risk undefined for table a={a} b={b} c={c} d={d}")]
    UndefinedRelativeRisk { a: u64, b: u64, c: u64, d: u64 },

    #[error("chi-squared test undefined: table a={a} b={b} c={c} d={d} has a zero margin")]
    DegenerateTable { a: u64, b: u64, c: u64, d: u64 },

    #[error("lead/lag: {0}")]
    LeadLag(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid configuration or input schemas, as
    /// opposed to runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::SpecRejected(_)
                | Error::MalformedHeader { .. }
                | Error::EmptyCohort(_)
        )
    }
}
