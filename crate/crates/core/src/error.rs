use std::fmt;

use thiserror::Error;

/// Which chart a flow was being evaluated in when an error surfaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartTag {
    Base,
    Barred,
}

impl fmt::Display for ChartTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChartTag::Base => f.write_str("base chart"),
            ChartTag::Barred => f.write_str("barred chart"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite {what} at {at:?}")]
    NonFinite { what: &'static str, at: Vec<f64> },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("singular {what} (condition number {condition:e}) at {at:?}")]
    Singular {
        what: &'static str,
        condition: f64,
        at: Vec<f64>,
    },

    #[error("negative flow time {0}")]
    NegativeTime(f64),

    #[error("integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{chart}: {source}")]
    InChart {
        chart: ChartTag,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_chart(self, chart: ChartTag) -> Self {
        Error::InChart {
            chart,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
