use super::AudioError;

/// Where the fixed-length segments of one clip start.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPlan {
    pub segment_len: usize,
    pub offsets: Vec<usize>,
    /// Clip length after zero-padding short clips up to `segment_len`.
    pub padded_len: usize,
}

impl SegmentPlan {
    pub fn n_segments(&self) -> usize {
        self.offsets.len()
    }
}

/// Spreads `n_segments` offsets evenly over `[0, clip_len − segment_len]`
/// (offset `i` is `⌊i · span / (n − 1)⌋`). A clip shorter than one segment
/// yields the single offset 0 and is zero-padded at the tail.
pub fn plan_segments(
    clip_len: usize,
    segment_len: usize,
    n_segments: usize,
) -> Result<SegmentPlan, AudioError> {
    if segment_len == 0 || n_segments == 0 {
        return Err(AudioError::InvalidArgument(format!(
            "segment_len and n_segments must be positive (got {segment_len}, {n_segments})"
        )));
    }
    if clip_len <= segment_len {
        return Ok(SegmentPlan {
            segment_len,
            offsets: vec![0],
            padded_len: segment_len,
        });
    }
    let span = (clip_len - segment_len) as u128;
    let offsets = if n_segments == 1 {
        vec![0]
    } else {
        let d = (n_segments - 1) as u128;
        (0..n_segments as u128)
            .map(|i| (i * span / d) as usize)
            .collect()
    };
    Ok(SegmentPlan {
        segment_len,
        offsets,
        padded_len: clip_len,
    })
}

/// Copies `len` samples starting at `offset`, zero-filling past the end.
pub fn extract(samples: &[f32], offset: usize, len: usize) -> Vec<f32> {
    let mut out = vec![0.0; len];
    if offset < samples.len() {
        let n = len.min(samples.len() - offset);
        out[..n].copy_from_slice(&samples[offset..offset + n]);
    }
    out
}
