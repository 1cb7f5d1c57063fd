//! The navigation agent: a bidirectional LSTM instruction encoder and a
//! two-layer decoder whose first layer consumes observations (previous
//! action, junction type, heading delta, panorama features) and whose second
//! layer consumes text and image attention contexts.

mod config;
mod episode;
mod model;

use streetnav_core::env::EnvError;
use streetnav_core::pano::PanoError;
use streetnav_tensor::{CheckpointError, TensorError};
use thiserror::Error;

pub use config::OrarConfig;
pub use episode::{
    act_greedy, argmax_action, rollout, teacher_forced_loss, Observer, RolloutRequest,
    TeacherExample,
};
pub use model::{DecoderState, Encoded, OrarModel, StepInput, StepOutput, START_ACTION};

#[derive(Debug, Error)]
pub enum OrarError {
    #[error("invalid model config: {0}")]
    Config(String),

    #[error("token id {id} outside vocabulary of {vocab}")]
    Vocab { id: usize, vocab: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("feature mismatch: {0}")]
    Features(String),

    #[error("instance `{id}`: {source}")]
    Data { id: String, source: EnvError },

    #[error(transparent)]
    Env(#[from] EnvError),

    #[error(transparent)]
    Pano(#[from] PanoError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
}
