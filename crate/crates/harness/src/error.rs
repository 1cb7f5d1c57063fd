use std::path::Path;

use streetnav_core::env::EnvError;
use streetnav_core::metrics::MetricsError;
use streetnav_core::pano::PanoError;
use streetnav_core::tokenizer::TokenizerError;
use streetnav_core::worldgen::WorldError;
use streetnav_orar::OrarError;
use streetnav_tensor::{CheckpointError, OptimError, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit code: 1 config, 2 data, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<OrarError> for HarnessError {
    fn from(e: OrarError) -> Self {
        match e {
            OrarError::Config(_) | OrarError::Json(_) => HarnessError::Config(e.to_string()),
            OrarError::Tensor(_) | OrarError::Checkpoint(_) | OrarError::Io(_) => {
                HarnessError::Runtime(e.to_string())
            }
            _ => HarnessError::Data(e.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(
    EnvError,
    PanoError,
    TokenizerError,
    WorldError,
    MetricsError
);

macro_rules! runtime_error {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_error!(TensorError, OptimError, CheckpointError);
