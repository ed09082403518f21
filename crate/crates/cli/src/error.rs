use thiserror::Error;

use cloakq_core::analytic::{ReductionError, RootError};
use cloakq_core::ctmc::CtmcError;
use cloakq_core::desim::SimError;
use cloakq_core::geometry::GeometryError;
use cloakq_core::params::ParamError;

/// Exit codes: 0 success (and within validation bounds), 2 validation
/// bounds exceeded, 3 configuration error, 4 I/O error. Code 2 is not an
/// error value — `validate` signals it through its return — so this type
/// only distinguishes 3 from 4.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(context: &str, err: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

macro_rules! config_error_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(err: $ty) -> Self {
                CliError::Config(err.to_string())
            }
        })*
    };
}

config_error_from!(
    ParamError,
    RootError,
    ReductionError,
    CtmcError,
    SimError,
    GeometryError
);
