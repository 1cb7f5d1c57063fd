//! Street-graph navigation environment, panorama feature stores, metrics,
//! BPE tokenizer and the synthetic world generator.

pub mod env;
pub mod metrics;
pub mod pano;
pub mod tokenizer;
pub mod worldgen;

pub use env::{
    Action, AgentState, DatasetTag, EnvError, EnvironmentGraph, NavInstance, StepContext,
    StepRecord, Termination, Trajectory,
};
