use thiserror::Error;

#[derive(Debug, Error)]
pub enum RadioError {
    #[error("scene generation reached density {achieved:.3} of target {target:.3}")]
    Generation { achieved: f64, target: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("position {index} lies inside a building volume")]
    InsideBuilding { index: usize },
    #[error("position {index} lies outside the scenario volume")]
    OutOfBounds { index: usize },
    #[error("degenerate channel: {0}")]
    Degenerate(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RadioError>;
