use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested object exceeds a configured size cap.
    #[error("resource limit: {0}")]
    Resource(String),

    /// The design matrix does not have full column rank.
    #[error("singular design: basis functions {indices:?} are not identifiable from the data")]
    SingularDesign { indices: Vec<Vec<isize>> },

    /// A numerical computation produced an unusable value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The data regime does not allow the requested statistic.
    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    /// Re-expressing a fit in another basis left a residual above tolerance.
    #[error("basis conversion failed: residual {residual:e} exceeds {tolerance:e}")]
    Conversion { residual: f64, tolerance: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
