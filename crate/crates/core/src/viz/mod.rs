//! Filter visualization: per-filter input waveforms found by gradient
//! ascent, their log-magnitude spectra, and sheets sorted by peak
//! frequency.

mod maximize;
mod sheet;
mod spectrum;

pub use maximize::{activation_maximization, LayerProbe, Maximization, Probe};
pub use sheet::{emit_sheet, SpectrumSheet};
pub use spectrum::{bin_hz, peak_bin, sort_by_peak, spectrum};

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::TensorError;
use crate::nn::{extent_trace, Model, ModelConfig};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VizConfig {
    /// 1 is the stem output, `n + 1` the output of block `n`.
    #[serde(default = "default_layer")]
    pub layer: usize,
    #[serde(default = "default_noise_len")]
    pub noise_len: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
}

fn default_layer() -> usize {
    1
}
fn default_noise_len() -> usize {
    729
}
fn default_steps() -> usize {
    256
}
fn default_step_size() -> f64 {
    0.1
}
fn default_noise_std() -> f64 {
    0.01
}
fn default_l2() -> f64 {
    1e-3
}

impl Default for VizConfig {
    fn default() -> Self {
        VizConfig {
            layer: default_layer(),
            noise_len: default_noise_len(),
            steps: default_steps(),
            step_size: default_step_size(),
            seed: 0,
            noise_std: default_noise_std(),
            l2: default_l2(),
        }
    }
}

impl VizConfig {
    pub fn validate(&self) -> Result<(), VizError> {
        let bad = |m: String| Err(VizError::Invalid(m));
        if self.layer == 0 {
            return bad("layer is 1-based; 0 is not a layer".into());
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.noise_len < 2 {
            return bad(format!(
                "noise_len {} is shorter than 2 samples",
                self.noise_len
            ));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad(format!("step_size {} must be positive", self.step_size));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std {} must be non-negative", self.noise_std));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad(format!("l2 {} must be non-negative", self.l2));
        }
        Ok(())
    }

    /// Checks that the target layer still has at least one frame for a
    /// `noise_len` input.
    pub fn validate_for(&self, cfg: &ModelConfig) -> Result<(), VizError> {
        self.validate()?;
        let layers = cfg.blocks.len() + 1;
        if self.layer > layers {
            return Err(VizError::Invalid(format!(
                "layer {} does not exist; the model has layers 1..={layers}",
                self.layer
            )));
        }
        let trace =
            extent_trace(cfg, self.noise_len).map_err(|e| VizError::Invalid(e.to_string()))?;
        if trace[self.layer - 1] == 0 {
            return Err(VizError::Invalid(format!(
                "noise_len {} leaves layer {} with no frames",
                self.noise_len, self.layer
            )));
        }
        Ok(())
    }
}

/// Refuses configurations whose first six stages (stem plus five blocks)
/// are not all 3-sized filters with 3-sized subsampling.
pub fn require_all_three(cfg: &ModelConfig) -> Result<(), VizError> {
    let stem_ok = cfg.stem.kernel == 3 && cfg.stem.stride == 3;
    let blocks_ok = cfg.blocks.len() >= 5
        && cfg.blocks[..5]
            .iter()
            .all(|b| b.conv_kernel == 3 && b.pool_size == 3);
    if stem_ok && blocks_ok {
        Ok(())
    } else {
        Err(VizError::Invalid(
            "visualization needs a stride-3 stem of size 3 followed by at least five blocks with 3-sized filters and pooling"
                .into(),
        ))
    }
}

/// Maximizes every filter of one layer, in parallel over filters, and
/// builds the sorted spectrum sheet.
pub fn visualize_layer(
    model: &Model<f32>,
    cfg: &VizConfig,
    workers: usize,
) -> Result<(SpectrumSheet, Vec<Maximization>), VizError> {
    cfg.validate_for(model.config())?;
    let probe = LayerProbe::new(model, cfg.layer - 1)?;
    let n = probe.n_filters();
    let run = || -> Result<Vec<Maximization>, VizError> {
        (0..n)
            .into_par_iter()
            .map(|f| activation_maximization(&probe, f, cfg))
            .collect()
    };
    let results = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| VizError::Invalid(format!("worker pool: {e}")))?
        .install(run)?;
    let spectra = results
        .iter()
        .map(|m| spectrum(&m.x))
        .collect::<Result<Vec<_>, _>>()?;
    let sheet = SpectrumSheet::new(
        cfg.layer,
        model.config().sample_rate,
        cfg.noise_len,
        spectra,
    )?;
    Ok((sheet, results))
}
