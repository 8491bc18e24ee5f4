use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("return map did not converge after {iterations} iterations (residual {residual:.3e})")]
    ReturnMap { iterations: usize, residual: f64 },

    #[error("newton iteration did not converge after {iterations} iterations; residual history {history:?}")]
    Newton { iterations: usize, history: Vec<f64> },

    #[error("load step {step} failed: {source}")]
    LoadStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("input feature {feature} is constant over the training partition")]
    ConstantFeature { feature: usize },

    #[error("output feature (coefficient {coefficient}, step {step}) has degenerate std {std:.3e}")]
    DegenerateOutput { coefficient: usize, step: usize, std: f64 },

    #[error("svd failed: {0}")]
    Svd(String),

    #[error("forward cache does not belong to the current parameters")]
    StaleCache,

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: Vec<crate::training::EpochRecord> },

    #[error("field {0} is already registered")]
    FieldCollision(String),

    #[error("unknown field {0}")]
    UnknownField(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("registries differ: {0}")]
    RegistryMismatch(String),

    #[error("parameter {index} value {value} lies outside [{lo}, {hi}]")]
    OutOfDomain { index: usize, value: f64, lo: f64, hi: f64 },

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("session already holds {0} steps")]
    StepOverflow(usize),

    #[error("bad blob: {0}")]
    Format(String),

    #[error("truncated blob: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("missing input {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
