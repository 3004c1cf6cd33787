use calib_il::store::StoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("spec error: {0}")]
    Spec(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Store(#[from] StoreError),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Process exit status: 2 spec, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Store(StoreError::Io { .. }) => 1,
            CliError::Store(StoreError::Invalid { source, .. }) => match source {
                calib_il::Error::NonFinite(_) | calib_il::Error::Degenerate(_) => 4,
                _ => 3,
            },
            CliError::Store(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<calib_il::Error> for CliError {
    fn from(e: calib_il::Error) -> Self {
        use calib_il::Error as E;
        match e {
            E::InvalidConfig(_) | E::InvalidSchedule(_) => CliError::Spec(e.to_string()),
            E::NonFinite(_) | E::Degenerate(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
