use std::fmt;

use plap_core::Error;

/// Why a run stopped. Each variant owns one process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    /// Invalid or inadmissible configuration, unreadable inputs, unwritable outputs. Exit 2.
    Config(String),
    /// A solver did not reach its tolerance or a verification failed. Exit 1.
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Numerical(_) => 1,
            Failure::Config(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::PoissonNotConverged { .. }
            | Error::DegenerateSamples { .. }
            | Error::UndefinedRatio(_) => Failure::Numerical(e.to_string()),
            Error::InvalidGrid(_)
            | Error::InvalidParameter { .. }
            | Error::ShapeMismatch(_)
            | Error::MissingConstant { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => Failure::Config(e.to_string()),
        }
    }
}
