use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("weight vector has {got} entries, topology requires {expected}")]
    WeightCount { expected: usize, got: usize },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite empirical risk at step {step} (step size {step_size:e} is too large)")]
    NonFiniteRisk { step: usize, step_size: f64 },

    #[error("partial derivative of order {order} not available (target supplies up to {max})")]
    DerivativeOrder { order: usize, max: usize },

    #[error("moment system rejected: {0}")]
    MomentSystem(String),

    #[error("network does not fit: requires depth {required_depth} and width {required_width}, got depth {depth} and width {width}")]
    Capacity {
        required_depth: usize,
        required_width: usize,
        depth: usize,
        width: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("slot assignment invalid: {0}")]
    Slots(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
