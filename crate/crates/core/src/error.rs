use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the pipeline, one variant per failure category.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("interpolation mode error: {0}")]
    Mode(String),
    #[error("degenerate volume: {0}")]
    DegenerateVolume(String),
    #[error("degenerate intensity range: {0}")]
    DegenerateRange(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerical error in layer `{layer}`: {detail}")]
    Numerical { layer: String, detail: String },
    #[error("training diverged at epoch {epoch} of fold {fold}: {detail}")]
    Divergence { epoch: usize, fold: usize, detail: String },
    #[error("percent error undefined: ground-truth volume is zero")]
    UndefinedPercentError,
    #[error("sample size error: need at least {needed} pairs, got {got}")]
    SampleSize { needed: usize, got: usize },
    #[error("degenerate variance: all differences are identical")]
    DegenerateVariance,
    #[error("empty detection matrix")]
    EmptyMatrix,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
