use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "step too large at t={t:.6}: jump probability {jump_prob:.6} exceeds 1{}; increase the number of steps",
        walker.map(|w| format!(" (walker {w})")).unwrap_or_default()
    )]
    StepTooLarge {
        t: f64,
        jump_prob: f64,
        walker: Option<usize>,
    },

    #[error("KFE integration failed at t={t:.6} (step {step:e}): {reason}")]
    NonConvergence { t: f64, step: f64, reason: String },

    #[error("infinite path weight: {0}")]
    InfiniteWeight(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state space of size {size} exceeds the dense oracle cap {cap}")]
    StateSpaceTooLarge { size: u128, cap: usize },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("non-finite loss residual at batch element {index}")]
    NonFinite { index: usize },

    #[error("all importance weights are infinite or quarantined")]
    AllWeightsInfinite,

    #[error("{quarantined} of {walkers} walkers quarantined (limit {limit})")]
    TooManyQuarantined {
        quarantined: usize,
        walkers: usize,
        limit: f64,
    },

    #[error("degenerate weights: ESS {ess:.3e} below 2/N")]
    DegenerateWeights { ess: f64 },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
