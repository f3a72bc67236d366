use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::audio::Task;
use crate::nn::ModelConfig;
use crate::train::{task_of, TrainConfig};
use crate::viz::VizConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Relative paths are resolved against the config file's directory.
    pub manifest: PathBuf,
    pub task: Task,
    #[serde(default = "one")]
    pub segments_per_clip: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

fn one() -> usize {
    1
}

/// Everything a training run needs, as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub viz: VizConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; relative paths inside it become
    /// relative to its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.manifest = base.join(&cfg.data.manifest);
        if let Some(out) = &cfg.output_dir {
            cfg.output_dir = Some(base.join(out));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {}; expected {CONFIG_VERSION}",
                self.version
            )));
        }
        self.model
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.viz
            .validate()
            .map_err(|e| CliError::Config(format!("viz: {e}")))?;
        let head = task_of(self.model.head.output);
        if head != self.data.task {
            return Err(CliError::Config(format!(
                "data.task is {:?} but the model head is {:?}",
                self.data.task, self.model.head.output
            )));
        }
        if self.data.segments_per_clip == 0 {
            return Err(CliError::Config(
                "data.segments_per_clip must be at least 1".into(),
            ));
        }
        if let Some(t) = self.data.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Config(format!(
                    "data.threshold {t} is outside [0, 1]"
                )));
            }
            if self.data.task != Task::Multilabel {
                return Err(CliError::Config(
                    "data.threshold only applies to multilabel tasks".into(),
                ));
            }
        }
        Ok(())
    }
}
