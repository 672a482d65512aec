use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} = {value} is not aligned to the grid step {step}")]
    Alignment {
        what: &'static str,
        value: f64,
        step: f64,
    },

    #[error("outside the domain: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("quadrature did not converge: residual {residual:e} exceeds tolerance {tolerance:e}")]
    QuadratureFailure { residual: f64, tolerance: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::QuadratureFailure { .. } => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
