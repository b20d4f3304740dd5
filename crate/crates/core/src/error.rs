use thiserror::Error;

/// Errors produced by the network, filter, benchmark and harness code.
#[derive(Debug, Error)]
pub enum CsrnError {
    /// Shapes or values handed to an operation violate its preconditions.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// The recurrent state or a trainer update produced a non-finite value.
    #[error("divergence at {context}: {detail}")]
    Divergence { context: String, detail: String },

    /// The innovation matrix could not be factorized.
    #[error("ill-conditioned innovation matrix (condition estimate {condition:e})")]
    Conditioning { condition: f64 },

    /// The weight covariance lost positive semi-definiteness.
    #[error("filter divergence: covariance minimum eigenvalue {min_eigenvalue:e}")]
    FilterDivergence { min_eigenvalue: f64 },

    /// A finite-difference oracle evaluated to a non-finite value.
    #[error("oracle failure: {0}")]
    OracleFailure(String),

    /// A rejection sampler ran out of retries.
    #[error("generation failed after {attempts} attempts: {what}")]
    GenerationFailure { what: String, attempts: usize },

    /// A metric has no cells or patterns to be computed over.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CsrnError {
    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        CsrnError::RejectedInput(msg.into())
    }

    /// True for errors caused by numerics going bad during training.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            CsrnError::Divergence { .. }
                | CsrnError::Conditioning { .. }
                | CsrnError::FilterDivergence { .. }
        )
    }
}

pub type Result<T, E = CsrnError> = std::result::Result<T, E>;
