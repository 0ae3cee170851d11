use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("time index {index} out of range 1..={n_points}")]
    IndexOutOfRange { index: usize, n_points: usize },

    #[error("inadmissible parameters: {0}")]
    Inadmissible(String),

    #[error("trend covariance matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    TrendCovarianceNotPsd { min_eigenvalue: f64 },

    #[error("{what} is singular or not positive definite (condition number {condition:.3e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("variant mismatch: model is {expected:?}, parameters are {found:?}")]
    VariantMismatch {
        expected: crate::model::Variant,
        found: crate::model::Variant,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("imputation failed: {0}")]
    Imputation(String),

    #[error("pooling failed: {0}")]
    Pooling(String),

    #[error("{count} unparseable input rows (first: {first})")]
    Parse { count: usize, first: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
