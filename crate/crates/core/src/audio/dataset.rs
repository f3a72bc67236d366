//! In-memory labelled clips and deterministic mini-batch iteration.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Split};
use super::segment::extract;
use super::{decode_wav, resample, AudioError, Waveform};
use crate::engine::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Any subset of classes per clip, including the empty set.
    Multilabel,
    /// Exactly one class per clip.
    Multiclass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub samples: Vec<f32>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// `[N, C]` indicator matrix.
    Multilabel(Tensor<f32>),
    Multiclass(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[N, 1, segment_len]`.
    pub x: Tensor<f32>,
    pub targets: Targets,
    /// Dataset indices of the clips in this batch.
    pub clips: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub clips: Vec<Clip>,
    pub n_classes: usize,
    pub task: Task,
}

/// Reads, decodes and resamples one file.
pub fn load_clip(path: &Path, sample_rate: u32) -> Result<Waveform, AudioError> {
    let bytes = std::fs::read(path).map_err(|e| AudioError::io(path, e))?;
    let w = decode_wav(&bytes).map_err(|e| AudioError::InFile {
        path: path.to_path_buf(),
        source: Box::new(e),
    })?;
    resample(&w, sample_rate)
}

/// Runs `f` on a pool of `workers` threads (0 = one per core).
pub fn with_workers<R: Send>(
    workers: usize,
    f: impl FnOnce() -> R + Send,
) -> Result<R, AudioError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| AudioError::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

impl Dataset {
    pub fn new(clips: Vec<Clip>, n_classes: usize, task: Task) -> Result<Self, AudioError> {
        for (i, c) in clips.iter().enumerate() {
            if let Some(&bad) = c.labels.iter().find(|&&l| l >= n_classes) {
                return Err(AudioError::InvalidArgument(format!(
                    "clip {i}: class {bad} out of range for {n_classes} classes"
                )));
            }
            if task == Task::Multiclass && c.labels.len() != 1 {
                return Err(AudioError::InvalidArgument(format!(
                    "clip {i}: multiclass clips need exactly one label, found {}",
                    c.labels.len()
                )));
            }
            if c.samples.is_empty() {
                return Err(AudioError::InvalidArgument(format!("clip {i} is empty")));
            }
        }
        Ok(Dataset {
            clips,
            n_classes,
            task,
        })
    }

    /// Loads every clip of `split`, in manifest order, decoding in parallel.
    pub fn load(
        manifest: &Manifest,
        split: Split,
        sample_rate: u32,
        task: Task,
        workers: usize,
    ) -> Result<Self, AudioError> {
        let records: Vec<_> = manifest.split(split).collect();
        let clips = with_workers(workers, || {
            records
                .par_iter()
                .map(|r| {
                    load_clip(&r.path, sample_rate).map(|w| Clip {
                        samples: w.samples,
                        labels: r.labels.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })??;
        Dataset::new(clips, manifest.vocabulary.len(), task)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn targets(&self, indices: &[usize]) -> Targets {
        match self.task {
            Task::Multiclass => {
                Targets::Multiclass(indices.iter().map(|&i| self.clips[i].labels[0]).collect())
            }
            Task::Multilabel => {
                let mut t = Tensor::zeros(&[indices.len(), self.n_classes]);
                for (row, &i) in indices.iter().enumerate() {
                    for &l in &self.clips[i].labels {
                        t.data_mut()[row * self.n_classes + l] = 1.0;
                    }
                }
                Targets::Multilabel(t)
            }
        }
    }

    /// Shuffled batches for one epoch. Each clip contributes one segment,
    /// drawn uniformly from its valid offsets; shorter clips are
    /// zero-padded. The order depends only on `(seed, epoch)`.
    pub fn epoch(
        &self,
        segment_len: usize,
        batch_size: usize,
        seed: u64,
        epoch: u64,
    ) -> EpochBatches<'_> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng);
        EpochBatches {
            data: self,
            order,
            pos: 0,
            segment_len,
            batch_size: batch_size.max(1),
            rng,
        }
    }
}

pub struct EpochBatches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    segment_len: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl Iterator for EpochBatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let clips = self.order[self.pos..end].to_vec();
        self.pos = end;
        let mut x = Vec::with_capacity(clips.len() * self.segment_len);
        for &i in &clips {
            let s = &self.data.clips[i].samples;
            let offset = if s.len() > self.segment_len {
                self.rng.random_range(0..=s.len() - self.segment_len)
            } else {
                0
            };
            x.extend(extract(s, offset, self.segment_len));
        }
        let x = Tensor::new(&[clips.len(), 1, self.segment_len], x).expect("batch shape");
        Some(Batch {
            x,
            targets: self.data.targets(&clips),
            clips,
        })
    }
}
