use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("tape was recorded against parameter version {tape}, network is at {network}")]
    StaleTape { tape: u64, network: u64 },

    #[error("training diverged{}: {detail}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Divergence {
        epoch: Option<usize>,
        detail: String,
    },

    #[error("model file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
