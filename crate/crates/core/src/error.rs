use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("evaluator `{what}` failed at probe point: {message}")]
    EvaluatorFailure { what: String, message: String },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("control set is empty: {0}")]
    EmptySet(String),

    #[error("non-finite {what} on path {path} at step {step}")]
    NonFinite {
        what: &'static str,
        path: usize,
        step: usize,
    },

    #[error("singular regression at step {step} ({features} features, {samples} samples)")]
    SingularRegression {
        step: usize,
        features: usize,
        samples: usize,
    },

    #[error(
        "degenerate density at step {step}: denominator floored on {floored} of {paths} paths"
    )]
    DegenerateDensity {
        step: usize,
        floored: usize,
        paths: usize,
    },

    #[error("missing partial derivative `{0}`")]
    MissingPartial(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable variant name for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EvaluatorFailure { .. } => "EvaluatorFailure",
            Error::InvalidDimensions(_) => "InvalidDimensions",
            Error::EmptySet(_) => "EmptySet",
            Error::NonFinite { .. } => "NonFinite",
            Error::SingularRegression { .. } => "SingularRegression",
            Error::DegenerateDensity { .. } => "DegenerateDensity",
            Error::MissingPartial(_) => "MissingPartial",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
        }
    }
}
