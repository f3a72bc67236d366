//! Synthetic tone-band audio for smoke tests and examples.
//!
//! Class `c` owns a frequency band; a clip of that class is a sum of
//! sinusoids drawn from the band plus white noise.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{encode_wav, Clip, SampleFormat, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct ToneBands {
    pub n_classes: usize,
    pub sample_rate: u32,
    pub clip_len: usize,
    /// Band edges span `[low_hz, high_hz]`, split geometrically.
    pub low_hz: f64,
    pub high_hz: f64,
    pub partials: usize,
    pub noise_std: f64,
}

impl Default for ToneBands {
    fn default() -> Self {
        ToneBands {
            n_classes: 3,
            sample_rate: 16_000,
            clip_len: 729,
            low_hz: 300.0,
            high_hz: 4800.0,
            partials: 2,
            noise_std: 0.05,
        }
    }
}

impl ToneBands {
    pub fn band(&self, class: usize) -> (f64, f64) {
        let ratio = (self.high_hz / self.low_hz).powf(1.0 / self.n_classes as f64);
        let lo = self.low_hz * ratio.powi(class as i32);
        (lo, lo * ratio)
    }

    /// One clip containing the bands of every class in `labels`.
    pub fn clip(&self, labels: &[usize], rng: &mut impl Rng) -> Vec<f32> {
        let noise = Normal::new(0.0, self.noise_std).expect("noise std is finite and non-negative");
        let mut x: Vec<f64> = (0..self.clip_len).map(|_| noise.sample(rng)).collect();
        let sr = self.sample_rate as f64;
        for &c in labels {
            let (lo, hi) = self.band(c);
            for _ in 0..self.partials {
                let f = rng.random_range(lo..hi);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = rng.random_range(0.2..0.4);
                for (n, v) in x.iter_mut().enumerate() {
                    *v += amp * (std::f64::consts::TAU * f * n as f64 / sr + phase).sin();
                }
            }
        }
        x.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect()
    }

    /// `n` single-label clips, classes assigned round-robin.
    pub fn multiclass(&self, n: usize, seed: u64) -> Vec<Clip> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let labels = vec![i % self.n_classes];
                Clip {
                    samples: self.clip(&labels, &mut rng),
                    labels,
                }
            })
            .collect()
    }

    /// `n` clips whose label sets are drawn independently per class with
    /// probability `p` (possibly empty).
    pub fn multilabel(&self, n: usize, p: f64, seed: u64) -> Vec<Clip> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let labels: Vec<usize> =
                    (0..self.n_classes).filter(|_| rng.random_bool(p)).collect();
                Clip {
                    samples: self.clip(&labels, &mut rng),
                    labels,
                }
            })
            .collect()
    }
}

/// Writes clips as 16-bit WAV files plus a `manifest.jsonl` whose labels
/// are `names[class]`. Returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    clips: &[(Clip, Split)],
    names: &[String],
    sample_rate: u32,
) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (i, (clip, split)) in clips.iter().enumerate() {
        let file = format!("clip{i:05}.wav");
        std::fs::write(
            dir.join(&file),
            encode_wav(&clip.samples, 1, sample_rate, SampleFormat::Pcm16),
        )?;
        let labels: Vec<&str> = clip.labels.iter().map(|&l| names[l].as_str()).collect();
        let line = serde_json::json!({ "path": file, "labels": labels, "split": split });
        manifest.push_str(&line.to_string());
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest)?;
    Ok(path)
}
