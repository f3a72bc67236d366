//! Audio input: WAV decoding, resampling, segmentation, manifests and
//! batching.

mod dataset;
mod manifest;
mod resample;
mod segment;
mod wav;

pub use dataset::{load_clip, with_workers, Batch, Clip, Dataset, EpochBatches, Targets, Task};
pub use manifest::{load_manifest, parse_manifest, ClipRecord, Manifest, Split};
pub use resample::{resample, Resampler, TAPS};
pub use segment::{extract, plan_segments, SegmentPlan};
pub use wav::{decode_wav, encode_wav, SampleFormat};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported WAV encoding: format tag 0x{tag:04X} with {bits} bits per sample (expected 16-bit PCM or 32-bit float)")]
    UnsupportedFormat { tag: u16, bits: u16 },
    #[error("unsupported WAV channel count {0} (expected 1 or 2)")]
    UnsupportedChannels(u16),
    #[error("truncated data chunk: header declares {expected} bytes, {found} present")]
    TruncatedData { expected: usize, found: usize },
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        source: Box<AudioError>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("empty manifest")]
    EmptyManifest,
    #[error("duplicate clip {path:?} on lines {first} and {line}")]
    DuplicateClip {
        path: String,
        first: usize,
        line: usize,
    },
    #[error("{0}")]
    InvalidArgument(String),
}

impl AudioError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        AudioError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Mono audio at a known rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
