//! Maps library errors onto the three failure exit codes.

use folr::basis::BasisError;
use folr::eval::EvalError;
use folr::fit::FitError;
use folr::ordinal::OrdinalError;
use folr::persist::PersistError;

#[derive(Debug)]
pub enum CliError {
    /// Exit code 1: bad flags or flag combinations.
    Usage(String),
    /// Exit code 2: unreadable, malformed, or inconsistent input data.
    Data(String),
    /// Exit code 3: the computation itself broke down.
    Numerical(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<BasisError> for CliError {
    fn from(e: BasisError) -> Self {
        match e {
            BasisError::RankDeficient(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<OrdinalError> for CliError {
    fn from(e: OrdinalError) -> Self {
        match e {
            OrdinalError::NonFiniteCoefficients | OrdinalError::NonFinitePredictor(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Basis(inner) => inner.into(),
            FitError::Ordinal(inner) => inner.into(),
            FitError::InvalidConfig(msg) => CliError::Usage(msg),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Basis(inner) => inner.into(),
            EvalError::Ordinal(inner) => inner.into(),
            EvalError::Fit(inner) => inner.into(),
            EvalError::TooFewFolds(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::Basis(inner) => inner.into(),
            PersistError::Ordinal(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}
