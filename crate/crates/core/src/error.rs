use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {node}: {detail}")]
    Shape { node: String, detail: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("no feed supplied for leaf {0}")]
    MissingFeed(String),
    #[error("loss node {0} is not a scalar")]
    NotScalar(String),
    #[error("label is not one-hot at pixel {pixel}")]
    NotOneHot { pixel: usize },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("parameter set `{0}` is frozen")]
    Frozen(String),
    #[error("numeric abort at iteration {iteration}: {detail}")]
    NumericAbort { iteration: usize, detail: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
