//! Layers, the SampleCNN and ReSE-2 building blocks, and model assembly.
//!
//! A [`ModelConfig`] fully determines the parameter layout
//! ([`params::param_layout`]) and the temporal geometry
//! ([`geometry::extent_trace`]). [`Model::forward`] runs
//! stem → blocks → per-tap global max-pool → channel concat → FC head.

mod config;
pub mod geometry;
pub mod layers;
mod model;
pub mod params;

pub use config::{
    default_se_reduction, Architecture, BlockKind, BlockSpec, HeadSpec, ModelConfig, OutputKind,
    StemSpec,
};
pub use geometry::{extent_trace, receptive_field, ReceptiveField};
pub use layers::{
    basic_block, batchnorm, rese2_block, se_module, BasicBlock, BatchNormLayer, BlockOutput, Mode,
    Rese2Block, SeLayer,
};
pub use model::{BnUpdate, Bound, Forward, Model};
pub use params::{ModelParams, Param, ParamRole};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid model config: {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("parameters do not match config: {0}")]
    Params(String),
}
