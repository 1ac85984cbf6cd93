use thiserror::Error;

/// Errors produced by the netar library.
#[derive(Debug, Error)]
pub enum NarError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid weight matrix: {0}")]
    InvalidWeights(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient history: need {needed} observations, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("singular Gram matrix at {block}; consider a ridge penalty")]
    SingularGram { block: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("process is not stable (spectral radius {radius})")]
    Unstable { radius: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<NarError>,
    },

    #[error("bootstrap aborted: {dropped} of {requested} replicates failed")]
    BootstrapFailures { dropped: usize, requested: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NarError {
    pub(crate) fn at_stage(self, stage: &'static str) -> NarError {
        NarError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            NarError::SingularGram { .. }
            | NarError::NotPositiveDefinite(_)
            | NarError::Singular(_)
            | NarError::NoConvergence(_)
            | NarError::Unstable { .. }
            | NarError::BootstrapFailures { .. } => true,
            NarError::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = NarError> = std::result::Result<T, E>;
