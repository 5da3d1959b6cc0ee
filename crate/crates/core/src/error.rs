use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("outside the domain: {0}")]
    Domain(String),

    #[error("quadrature construction failed: {0}")]
    Construction(String),

    #[error("cut cell inconsistent with its classification: {0}")]
    Classification(String),

    #[error("non-finite integrand value at {0:?}")]
    Evaluation(Vec<f64>),

    #[error("stabilization failed: {0}")]
    Stabilization(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("normalization failed: {0}")]
    Normalization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Domain(_) => "domain",
            Error::Construction(_) => "construction",
            Error::Classification(_) => "classification",
            Error::Evaluation(_) => "evaluation",
            Error::Stabilization(_) => "stabilization",
            Error::Dimension(_) => "dimension",
            Error::Normalization(_) => "normalization",
            Error::Io(_) => "io",
        }
    }
}
