use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("underdetermined basis: {basis} basis functions for {samples} samples")]
    UnderdeterminedBasis { basis: usize, samples: usize },

    #[error("singular design: column {column} is numerically dependent (ridge = 0)")]
    SingularDesign { column: usize },

    #[error("non-finite value produced at step {step}")]
    NonFinite { step: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("barrier crossing: lower {lower} >= upper {upper}")]
    BarrierCrossing { lower: f64, upper: f64 },

    #[error("unsupported scenario: {0}")]
    Unsupported(String),

    #[error("unknown reference case `{0}`")]
    UnknownCase(String),

    #[error("resource error: {0}")]
    Resource(String),
}

pub type Result<T> = std::result::Result<T, Error>;
