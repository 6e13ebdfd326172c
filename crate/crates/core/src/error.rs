use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not unitary (max deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("not a valid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid system parameters: {0}")]
    InvalidSystem(String),

    #[error("invalid controls: {0}")]
    InvalidControls(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite matrix entries")]
    NonFiniteMatrix,

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("ODE step size underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("{path}: line {line}: {message}")]
    Csv { path: String, line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
