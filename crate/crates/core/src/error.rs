use thiserror::Error;

/// Errors produced by the inference library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid alpha: {0}")]
    InvalidAlpha(String),

    #[error("empty weight set")]
    EmptyWeights,

    #[error("all importance weights are zero (every log weight is -inf)")]
    AllWeightsZero,

    #[error("log weight {index} is {value}; entries must be finite or -inf")]
    InvalidLogWeight { index: usize, value: f64 },

    #[error("quadrature grid rejected: {0}")]
    InvalidGrid(String),

    #[error("non-finite gradient component {component} from sample {sample}")]
    NonFiniteGradient { sample: usize, component: usize },

    #[error("non-finite function value at coordinate {coordinate}")]
    NonFiniteValue { coordinate: usize },

    #[error("log joint density is {value}")]
    NonFiniteLogJoint { value: f64 },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("training diverged at step {step}: objective {objective}")]
    Diverged {
        step: usize,
        objective: f64,
        last_params: Vec<f64>,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parameter file: {0}")]
    ParamFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
