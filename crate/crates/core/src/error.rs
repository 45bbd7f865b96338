use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("input contract violated: {0}")]
    InputContract(String),

    #[error("level {0} has no retained attempts")]
    EmptyLevel(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("level {0} is unfittable: no completions in the fitting range")]
    Unfittable(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("every start failed for level {level}: {last_error}")]
    FitFailed { level: String, last_error: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate regressor: {0}")]
    DegenerateRegressor(String),

    #[error("degenerate correction coefficients: alpha must be non-zero")]
    DegenerateCoefficients,

    #[error("fit for level {0} did not converge")]
    UnusableFit(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
