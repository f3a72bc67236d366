//! Optimisation, evaluation metrics, clip-level prediction and
//! checkpoints.

mod checkpoint;
pub mod metrics;
mod optim;
mod predict;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointMeta, MAGIC, VERSION};
pub use metrics::{accuracy, argmax, auc_summary, instance_f1, roc_auc, AucSummary};
pub use optim::{Optimizer, OptimizerConfig};
pub use predict::{predict_clip, SegmentScorer};
pub use trainer::{
    clip_scores, evaluate, selection_metric, task_of, train, write_metric_log, EpochEvent,
    EvalOptions, EvalReport, MetricRow, Precision, Schedule, TrainConfig, TrainData, TrainOutcome,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::audio::AudioError;
use crate::engine::TensorError;
use crate::nn::ConfigError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, batch {batch} (lr {lr}): {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        lr: f64,
        detail: String,
    },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
