use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient samples: source exhausted after {consumed} draws")]
    InsufficientSamples { consumed: usize },
    #[error("stage-one estimate {0} is not positive; the two-stage method needs a positive mean")]
    NonPositiveEstimate(f64),
    #[error("outside the formula's domain: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("poset has {n} elements, at most {max} supported")]
    Size { n: usize, max: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input rather than by a run going wrong.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Domain(_)
                | Error::Unsupported(_)
                | Error::Config(_)
                | Error::Size { .. }
                | Error::Parse(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
