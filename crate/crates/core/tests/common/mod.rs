//! Helpers and independent reference implementations shared by the
//! integration tests. Nothing here calls into the code paths it checks.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samplecnn::engine::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// Naive `[N, C, T]` convolution: one accumulator per output element,
/// explicit bounds test for zero padding.
pub fn naive_conv1d(
    x: &[f64],
    (n, ci, t): (usize, usize, usize),
    w: &[f64],
    (co, k): (usize, usize),
    b: Option<&[f64]>,
    stride: usize,
    pad_l: usize,
    pad_r: usize,
) -> (Vec<f64>, usize) {
    let out_len = (t + pad_l + pad_r - k) / stride + 1;
    let mut out = Vec::new();
    for bn in 0..n {
        for o in 0..co {
            for ot in 0..out_len {
                let mut acc = b.map_or(0.0, |b| b[o]);
                for c in 0..ci {
                    for kk in 0..k {
                        let pos = (ot * stride + kk) as isize - pad_l as isize;
                        if pos >= 0 && (pos as usize) < t {
                            acc += w[(o * ci + c) * k + kk] * x[(bn * ci + c) * t + pos as usize];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    (out, out_len)
}

/// Direct DFT magnitude by summation, recomputing every angle.
pub fn naive_dft_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k as f64) * (i as f64) / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// ROC AUC by enumerating every positive/negative pair.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Instance F1 from explicit label sets.
pub fn set_instance_f1(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> f64 {
    use std::collections::BTreeSet;
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let ps: BTreeSet<usize> = p.iter().enumerate().filter(|x| *x.1).map(|x| x.0).collect();
        let ts: BTreeSet<usize> = t.iter().enumerate().filter(|x| *x.1).map(|x| x.0).collect();
        let f = match (ps.is_empty(), ts.is_empty()) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => {
                let inter = ps.intersection(&ts).count() as f64;
                if inter == 0.0 {
                    0.0
                } else {
                    let prec = inter / ps.len() as f64;
                    let rec = inter / ts.len() as f64;
                    2.0 * prec * rec / (prec + rec)
                }
            }
        };
        total += f;
    }
    total / pred.len() as f64
}
