use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can surface.
///
/// Variant names are stable: the CLI reports them verbatim in its
/// machine-readable error file.
#[derive(Debug, Error)]
pub enum Error {
    #[error("objective is not finite at the initial point")]
    NonFiniteAtInit,
    #[error("argument outside the distribution's domain: {0}")]
    DomainError(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: {msg}")]
    ParseError { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("point ({x}, {y}) lies outside the raster extent{}", step.map(|s| format!(" (step {s})")).unwrap_or_default())]
    OutOfExtent { x: f64, y: f64, step: Option<usize> },
    #[error("rasters do not share extent and cell size: {0}")]
    ExtentMismatch(String),
    #[error("degenerate geometry: {0}")]
    DegenerateInput(String),

    #[error("track {id}: duplicate timestamp {t}")]
    DuplicateTimestamp { id: String, t: i64 },
    #[error("line {line}: non-finite coordinate")]
    NonFiniteCoordinate { line: usize },

    #[error("complete or quasi-complete separation: |{term}| exceeded {limit} during fitting")]
    SeparationDetected { term: String, limit: f64 },
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("missing covariate `{0}`")]
    MissingCovariate(String),
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("too few steps: need {needed}, have {have}")]
    TooFewSteps { needed: usize, have: usize },
    #[error("extent exhausted: {0}")]
    ExtentExhausted(String),
    #[error("updated movement kernel invalid ({term}): {msg}")]
    InvalidUpdatedKernel { term: String, msg: String },

    #[error("invalid observation at step {index}: {msg}")]
    InvalidObservation { index: usize, msg: String },
    #[error("all {0} restarts failed")]
    AllRestartsFailed(usize),
    #[error("matrix is not row-stochastic: {0}")]
    NonStochasticInput(String),
    #[error("fit has movement interactions; a movement context (l, ln l, cos theta) is required")]
    MissingMovementContext,

    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Variant name, as written to error reports.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonFiniteAtInit => "NonFiniteAtInit",
            Error::DomainError(_) => "DomainError",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::ParseError { .. } => "ParseError",
            Error::Io { .. } => "IoError",
            Error::OutOfExtent { .. } => "OutOfExtent",
            Error::ExtentMismatch(_) => "ExtentMismatch",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::DuplicateTimestamp { .. } => "DuplicateTimestamp",
            Error::NonFiniteCoordinate { .. } => "NonFiniteCoordinate",
            Error::SeparationDetected { .. } => "SeparationDetected",
            Error::SingularDesign(_) => "SingularDesign",
            Error::MissingCovariate(_) => "MissingCovariate",
            Error::UnknownCovariate(_) => "UnknownCovariate",
            Error::TooFewSteps { .. } => "TooFewSteps",
            Error::ExtentExhausted(_) => "ExtentExhausted",
            Error::InvalidUpdatedKernel { .. } => "InvalidUpdatedKernel",
            Error::InvalidObservation { .. } => "InvalidObservation",
            Error::AllRestartsFailed(_) => "AllRestartsFailed",
            Error::NonStochasticInput(_) => "NonStochasticInput",
            Error::MissingMovementContext => "MissingMovementContext",
            Error::Usage(_) => "UsageError",
        }
    }

    /// True for failures of a statistical fit, as opposed to bad input.
    pub fn is_model_failure(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteAtInit
                | Error::SeparationDetected { .. }
                | Error::SingularDesign(_)
                | Error::TooFewSteps { .. }
                | Error::ExtentExhausted(_)
                | Error::InvalidUpdatedKernel { .. }
                | Error::AllRestartsFailed(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::ParseError {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
