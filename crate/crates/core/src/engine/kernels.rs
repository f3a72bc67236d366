//! Raw loops behind the convolution and pooling ops.
//!
//! All buffers are row-major `[N, C, T]`. Loops run in a fixed order so the
//! results are bitwise reproducible.

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    /// `floor((T + pad_l + pad_r - K) / stride) + 1`, or `None` when the
    /// padded input is shorter than the kernel.
    pub fn out_len(&self) -> Option<usize> {
        conv_out_len(
            self.in_len,
            self.kernel,
            self.stride,
            self.pad_left,
            self.pad_right,
        )
    }

    /// Output positions `t` for which `t*stride + k - pad_left` lands inside
    /// the unpadded input.
    fn valid_range(&self, k: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad_left > k {
            (self.pad_left - k).div_ceil(s)
        } else {
            0
        };
        let reach = self.in_len - 1 + self.pad_left;
        let hi = if reach >= k {
            ((reach - k) / s + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub fn conv_out_len(
    in_len: usize,
    kernel: usize,
    stride: usize,
    pad_left: usize,
    pad_right: usize,
) -> Option<usize> {
    let padded = in_len + pad_left + pad_right;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn conv1d_forward<S: Scalar>(g: &ConvGeom, x: &[S], w: &[S], b: Option<&[S]>) -> Vec<S> {
    let out_len = g.out_len().expect("validated by caller");
    let (ci, co, t_in, k_len, s) = (g.in_channels, g.out_channels, g.in_len, g.kernel, g.stride);
    let mut out = vec![S::zero(); g.batch * co * out_len];
    for n in 0..g.batch {
        for o in 0..co {
            let row = &mut out[(n * co + o) * out_len..][..out_len];
            if let Some(b) = b {
                row.fill(b[o]);
            }
            for c in 0..ci {
                let xrow = &x[(n * ci + c) * t_in..][..t_in];
                for k in 0..k_len {
                    let wv = w[(o * ci + c) * k_len + k];
                    let (lo, hi) = g.valid_range(k, out_len);
                    if s == 1 {
                        let start = lo + k - g.pad_left;
                        for (r, &xv) in row[lo..hi].iter_mut().zip(&xrow[start..]) {
                            *r = *r + wv * xv;
                        }
                    } else {
                        for (t, r) in row.iter_mut().enumerate().take(hi).skip(lo) {
                            *r = *r + wv * xrow[t * s + k - g.pad_left];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)` for a given upstream gradient.
pub fn conv1d_backward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    w: &[S],
    dout: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let out_len = g.out_len().expect("validated by caller");
    let (ci, co, t_in, k_len, s) = (g.in_channels, g.out_channels, g.in_len, g.kernel, g.stride);
    let mut dx = vec![S::zero(); x.len()];
    let mut dw = vec![S::zero(); w.len()];
    let mut db = vec![S::zero(); co];
    for n in 0..g.batch {
        for o in 0..co {
            let drow = &dout[(n * co + o) * out_len..][..out_len];
            db[o] = db[o] + drow.iter().copied().sum::<S>();
            for c in 0..ci {
                let xrow = &x[(n * ci + c) * t_in..][..t_in];
                let dxrow = &mut dx[(n * ci + c) * t_in..][..t_in];
                for k in 0..k_len {
                    let widx = (o * ci + c) * k_len + k;
                    let wv = w[widx];
                    let (lo, hi) = g.valid_range(k, out_len);
                    let mut acc = S::zero();
                    for t in lo..hi {
                        let i = t * s + k - g.pad_left;
                        acc = acc + drow[t] * xrow[i];
                        dxrow[i] = dxrow[i] + drow[t] * wv;
                    }
                    dw[widx] = dw[widx] + acc;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Non-overlapping max pooling over the last axis (window = stride = `size`,
/// trailing frames that do not fill a window are dropped). Returns the pooled
/// values and, per output, the flat input index of the first maximum.
pub fn maxpool1d_forward<S: Scalar>(
    x: &[S],
    rows: usize,
    len: usize,
    size: usize,
) -> (Vec<S>, Vec<usize>) {
    let out_len = len / size;
    let mut out = Vec::with_capacity(rows * out_len);
    let mut arg = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        let base = r * len;
        for t in 0..out_len {
            let start = base + t * size;
            let mut best = start;
            for i in start + 1..start + size {
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            arg.push(best);
        }
    }
    (out, arg)
}

/// Max over the whole last axis, first maximum wins.
pub fn max_last_axis<S: Scalar>(x: &[S], rows: usize, len: usize) -> (Vec<S>, Vec<usize>) {
    maxpool1d_forward(x, rows, len, len)
}
