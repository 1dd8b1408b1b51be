use std::fmt;

use cf3d_autodiff::TensorError;
use cf3d_core::CoreError;
use cf3d_interp::InterpError;
use cf3d_radio::RadioError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A failure carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

fn tensor_code(e: &TensorError) -> i32 {
    match e {
        TensorError::Config(_) | TensorError::Usage(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn radio_code(e: &RadioError) -> i32 {
    match e {
        RadioError::Config(_) | RadioError::Usage(_) => EXIT_USAGE,
        RadioError::Degenerate(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::Tensor(t) => tensor_code(t),
            CoreError::Radio(r) => radio_code(r),
            CoreError::Interp(InterpError::Usage(_)) => EXIT_USAGE,
            CoreError::Interp(InterpError::Numeric(_)) | CoreError::NonFinite { .. } => EXIT_NUMERIC,
            CoreError::Config(_) | CoreError::Usage(_) => EXIT_USAGE,
            CoreError::Range { .. } | CoreError::Io(_) => EXIT_DATA,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<RadioError> for CliError {
    fn from(e: RadioError) -> Self {
        Self {
            code: radio_code(&e),
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
