use thiserror::Error;

pub type Result<T, E = HarmonizerError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarmonizerError {
    #[error(transparent)]
    Autograd(#[from] inspex_autodiff::AutogradError),

    #[error(transparent)]
    Inspex(#[from] inspex_core::InspexError),

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence { epoch: usize, batch: usize, detail: String },
}
