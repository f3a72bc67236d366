//! Rational-ratio band-limited resampling with a Kaiser-windowed sinc.

use std::collections::HashMap;

use super::{AudioError, Waveform};

/// Taps per output sample.
pub const TAPS: usize = 32;
const HALF: f64 = (TAPS / 2) as f64;
const KAISER_BETA: f64 = 8.0;
/// Passband edge as a fraction of the lower rate's Nyquist frequency.
const CUTOFF: f64 = 0.9;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut sum, mut term, mut k) = (1.0, 1.0, 1.0);
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resampler between two fixed rates. Output sample `j` sits at input
/// position `j · src / dst`; its 32 taps depend only on the fractional part
/// of that position, so they are computed once per phase and cached.
pub struct Resampler {
    up: u64,
    down: u64,
    /// Cutoff in cycles per input sample.
    cutoff: f64,
    phases: HashMap<u64, [f64; TAPS]>,
}

impl Resampler {
    pub fn new(src_rate: u32, dst_rate: u32) -> Result<Self, AudioError> {
        if src_rate == 0 || dst_rate == 0 {
            return Err(AudioError::InvalidArgument(format!(
                "sample rates must be positive (got {src_rate} -> {dst_rate})"
            )));
        }
        let g = gcd(src_rate as u64, dst_rate as u64);
        let cutoff = CUTOFF * 0.5 * (dst_rate as f64 / src_rate as f64).min(1.0);
        Ok(Resampler {
            up: dst_rate as u64 / g,
            down: src_rate as u64 / g,
            cutoff,
            phases: HashMap::new(),
        })
    }

    fn taps(&mut self, phase: u64) -> &[f64; TAPS] {
        let (up, fc) = (self.up, self.cutoff);
        self.phases.entry(phase).or_insert_with(|| {
            let frac = phase as f64 / up as f64;
            let i0b = bessel_i0(KAISER_BETA);
            let mut h = [0.0; TAPS];
            for (i, tap) in h.iter_mut().enumerate() {
                // Input index base − 15 + i, distance d from the output position.
                let d = frac + (TAPS / 2 - 1) as f64 - i as f64;
                let r = (d / HALF).clamp(-1.0, 1.0);
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0b;
                *tap = 2.0 * fc * sinc(2.0 * fc * d) * window;
            }
            let sum: f64 = h.iter().sum();
            h.iter_mut().for_each(|t| *t /= sum);
            h
        })
    }

    /// `round(len · dst / src)`.
    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u128 * self.up as u128 * 2 + self.down as u128) / (2 * self.down as u128))
            as usize
    }

    pub fn process(&mut self, input: &[f32]) -> Vec<f32> {
        if self.up == self.down {
            return input.to_vec();
        }
        let n = self.output_len(input.len());
        let mut out = Vec::with_capacity(n);
        for j in 0..n as u64 {
            let pos = j * self.down;
            let base = (pos / self.up) as i64;
            let taps = *self.taps(pos % self.up);
            let first = base - (TAPS as i64 / 2 - 1);
            let mut acc = 0.0f64;
            for (i, &h) in taps.iter().enumerate() {
                let k = first + i as i64;
                if k >= 0 && (k as usize) < input.len() {
                    acc += h * input[k as usize] as f64;
                }
            }
            out.push(acc as f32);
        }
        out
    }
}

/// Converts `w` to `target_rate`. Equal rates return an exact copy.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform, AudioError> {
    let mut r = Resampler::new(w.sample_rate, target_rate)?;
    Waveform::new(r.process(&w.samples), target_rate)
}
