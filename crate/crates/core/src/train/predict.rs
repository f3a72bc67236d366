use crate::audio::{extract, plan_segments};
use crate::engine::{Scalar, Tensor, TensorError};
use crate::nn::Model;

use super::TrainError;

/// Anything that maps a `[N, 1, input_len]` batch to `[N, C]` scores.
pub trait SegmentScorer<S: Scalar> {
    fn input_len(&self) -> usize;
    fn score(&self, batch: &Tensor<S>) -> Result<Tensor<S>, TensorError>;
}

impl<S: Scalar> SegmentScorer<S> for Model<S> {
    fn input_len(&self) -> usize {
        self.config().input_len
    }

    fn score(&self, batch: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.predict(batch)
    }
}

/// Segments scored per forward pass.
const CHUNK: usize = 16;

/// Clip-level scores: the arithmetic mean of the post-activation scores of
/// `n_segments` evenly spaced segments, accumulated in segment order.
pub fn predict_clip<S: Scalar, M: SegmentScorer<S> + ?Sized>(
    model: &M,
    samples: &[f32],
    n_segments: usize,
) -> Result<Vec<S>, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Invalid(
            "cannot predict an empty waveform".into(),
        ));
    }
    let len = model.input_len();
    let plan = plan_segments(samples.len(), len, n_segments)?;
    let mut sum: Option<Vec<S>> = None;
    for offsets in plan.offsets.chunks(CHUNK) {
        let mut data = Vec::with_capacity(offsets.len() * len);
        for &o in offsets {
            data.extend(
                extract(samples, o, len)
                    .into_iter()
                    .map(|v| S::of(v as f64)),
            );
        }
        let scores = model.score(&Tensor::new(&[offsets.len(), 1, len], data)?)?;
        let c = scores.len() / offsets.len();
        for row in scores.data().chunks(c) {
            match &mut sum {
                None => sum = Some(row.to_vec()),
                Some(acc) => acc.iter_mut().zip(row).for_each(|(a, &r)| *a = *a + r),
            }
        }
    }
    let n = S::of(plan.n_segments() as f64);
    Ok(sum
        .expect("at least one segment")
        .into_iter()
        .map(|v| v / n)
        .collect())
}
