use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("effective step size {step} is outside the stability bound (critical step size {bound})")]
    OutOfBound { step: f64, bound: f64 },

    #[error("predicted MSE does not decay: geometric ratio {ratio} is outside (0, 1)")]
    PredictedDivergence { ratio: f64 },

    #[error("normal equations are singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("sample range {start}..{end} is outside a curve of length {len}")]
    Range { start: usize, end: usize, len: usize },

    #[error("all {0} trials diverged")]
    AllDiverged(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
