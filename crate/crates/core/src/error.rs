use thiserror::Error;

/// Errors raised by the pseudo posterior toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no finite likelihood contributions")]
    NoFiniteRecords,

    #[error("non-finite log-likelihood at draw {draw}, record {record}: apply weights first")]
    NonFiniteEntry { draw: usize, record: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("posterior improper: {0}")]
    PosteriorImproper(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// True for failures caused by the numbers themselves rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NoFiniteRecords
                | Error::NonFiniteEntry { .. }
                | Error::PosteriorImproper(_)
                | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
