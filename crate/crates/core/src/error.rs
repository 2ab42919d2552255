use thiserror::Error;

use crate::model::LogisticModel;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Positive-weight training data carries a single label, so the
    /// unregularized optimum sits at infinity.
    #[error("degenerate separation: {0}")]
    Separation(String),

    #[error("no convergence after {iters} iterations (gradient norm {grad_norm:.3e})")]
    Convergence {
        iters: usize,
        grad_norm: f64,
        last: Box<LogisticModel>,
    },

    #[error("absolute continuity violated: {0}")]
    AbsoluteContinuity(String),

    #[error("degenerate prior: {0}")]
    DegeneratePrior(String),

    #[error("{context}: {source}")]
    Pipeline {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }

    pub(crate) fn with_context(self, context: impl Into<String>) -> Self {
        Error::Pipeline {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping pipeline context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Pipeline { source, .. } => source.root(),
            e => e,
        }
    }

    /// Short machine-readable tag used in result tables.
    pub fn tag(&self) -> &'static str {
        match self.root() {
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Separation(_) => "separation",
            Error::Convergence { .. } => "convergence",
            Error::AbsoluteContinuity(_) => "absolute_continuity",
            Error::DegeneratePrior(_) => "degenerate_prior",
            Error::Pipeline { .. } => "pipeline",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
