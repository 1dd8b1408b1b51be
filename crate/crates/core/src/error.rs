use cf3d_autodiff::TensorError;
use cf3d_interp::InterpError;
use cf3d_radio::RadioError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("non-finite loss in {stage} at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        stage: &'static str,
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("coordinate {value} on axis {axis} lies outside [0,1]")]
    Range { axis: usize, value: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
