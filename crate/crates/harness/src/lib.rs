//! Experiment orchestration for the street navigation agent: world and
//! split generation, training with dev-SPD model selection, evaluation,
//! oracle sub-task and masking protocols, and report emission.

pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod masking;
pub mod report;
pub mod run;
pub mod train;

pub use config::{ExperimentConfig, GenConfig, MaskSetting, Scenario, SplitName};
pub use error::HarnessError;
pub use eval::{evaluate, oracle_eval, EvalContext, Policy, Subtask};
pub use run::{run_experiment, Inputs, RunInfo, RunResult};
pub use train::{train, EpochLog, TrainData, TrainOutcome};
