use thiserror::Error;

/// Errors raised by the simulation and numerics layers.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("datum rejected: {0}")]
    UnboundedDatum(String),

    #[error("solvability condition violated: input mean {mean:e} is not zero")]
    Solvability { mean: f64 },

    #[error("Fourier mode {k} exceeds the truncation K_max = {k_max}")]
    ModeOutOfRange { k: usize, k_max: usize },

    #[error("fit needs at least {needed} usable points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
