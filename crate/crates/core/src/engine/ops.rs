//! Forward definitions of every differentiable op.

use super::kernels::{self, ConvGeom};
use super::tape::{sigmoid, Op};
use super::{Scalar, Tape, Tensor, TensorError, Var};

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    /// Unbiased (M−1 denominator) when more than one value per channel.
    pub var: Vec<S>,
}

impl<S: Scalar> Tape<S> {
    fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn nct3(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize), TensorError> {
        self.value(v).nct().ok_or_else(|| TensorError::Rank {
            op,
            expected: "2 or 3",
            shape: self.shape(v).to_vec(),
        })
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(name, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(av.shape(), data)?;
        self.push(name, out, op, &[a, b])
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(S) -> S,
        op: Op<S>,
    ) -> Result<Var, TensorError> {
        let out = self.value(a).map(f);
        self.push(name, out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: S) -> Result<Var, TensorError> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("relu", a, |x| x.max(S::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("log", a, |x| x.ln(), Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / S::of(v.len() as f64));
        self.push("mean", out, Op::Mean(a), &[a])
    }

    /// `[N, C, T] -> [N, C]` average over time.
    pub fn mean_time(&mut self, a: Var) -> Result<Var, TensorError> {
        let (n, c, t) = self.nct3("mean_time", a)?;
        let inv = S::one() / S::of(t as f64);
        let data = self
            .value(a)
            .data()
            .chunks(t)
            .map(|row| row.iter().copied().sum::<S>() * inv)
            .collect();
        let out = Tensor::new(&[n, c], data)?;
        self.push("mean_time", out, Op::MeanTime(a), &[a])
    }

    /// `[N, C, T] -> [N, C]` global max over time; the first maximum takes
    /// the gradient.
    pub fn max_time(&mut self, a: Var) -> Result<Var, TensorError> {
        let (n, c, t) = self.nct3("max_time", a)?;
        let (data, arg) = kernels::max_last_axis(self.value(a).data(), n * c, t);
        let out = Tensor::new(&[n, c], data)?;
        self.push("max_time", out, Op::MaxTime { x: a, arg }, &[a])
    }

    /// `x [N, F] · wᵀ [F, O] + b -> [N, O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(mismatch("linear", xs, ws));
        }
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(mismatch("linear bias", self.shape(b), &[o]));
            }
        }
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let bv = b.map(|b| self.value(b).data());
        let mut data = Vec::with_capacity(n * o);
        for r in 0..n {
            let xrow = &xv[r * f..][..f];
            for j in 0..o {
                let dot: S = xrow
                    .iter()
                    .zip(&wv[j * f..][..f])
                    .map(|(&a, &b)| a * b)
                    .sum();
                data.push(dot + bv.map_or(S::zero(), |b| b[j]));
            }
        }
        let out = Tensor::new(&[n, o], data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", out, Op::Linear { x, w, b }, &inputs)
    }

    /// 1-D convolution with symmetric zero padding.
    ///
    /// `x [N, C_in, T]` (or `[C_in, T]`), `w [C_out, C_in, K]`, `b [C_out]`;
    /// output extent is `floor((T + 2·pad − K) / stride) + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        self.conv1d_padded(x, w, b, stride, pad, pad)
    }

    /// 1-D convolution with independent left/right zero padding.
    pub fn conv1d_padded(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var, TensorError> {
        let (n, ci, t) = self.nct3("conv1d", x)?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != ci {
            return Err(mismatch("conv1d", self.shape(x), &ws));
        }
        let (co, k) = (ws[0], ws[2]);
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(mismatch("conv1d bias", self.shape(b), &[co]));
            }
        }
        let geom = ConvGeom {
            batch: n,
            in_channels: ci,
            out_channels: co,
            in_len: t,
            kernel: k,
            stride,
            pad_left,
            pad_right,
        };
        let Some(out_len) = geom.out_len() else {
            return Err(TensorError::Extent {
                op: "conv1d",
                len: t + pad_left + pad_right,
                needed: k,
            });
        };
        let data = kernels::conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let shape = if self.shape(x).len() == 2 {
            vec![co, out_len]
        } else {
            vec![n, co, out_len]
        };
        let out = Tensor::new(&shape, data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv1d", out, Op::Conv1d { x, w, b, geom }, &inputs)
    }

    /// Non-overlapping max pooling along time; trailing frames that do not
    /// fill a window are dropped (`T' = floor(T / size)`).
    pub fn maxpool1d(&mut self, x: Var, size: usize) -> Result<Var, TensorError> {
        let (n, c, t) = self.nct3("maxpool1d", x)?;
        if size == 0 || t < size {
            return Err(TensorError::Extent {
                op: "maxpool1d",
                len: t,
                needed: size.max(1),
            });
        }
        let (data, arg) = kernels::maxpool1d_forward(self.value(x).data(), n * c, t, size);
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("rank ≥ 2") = t / size;
        let out = Tensor::new(&shape, data)?;
        self.push("maxpool1d", out, Op::MaxPool1d { x, arg }, &[x])
    }

    /// Concatenates `[N, C_i]` or `[N, C_i, T]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty {
            op: "concat_channels",
        })?;
        let ref_shape = self.shape(*first).to_vec();
        if ref_shape.len() < 2 {
            return Err(TensorError::Rank {
                op: "concat_channels",
                expected: "2 or 3",
                shape: ref_shape,
            });
        }
        let mut axis_len = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible =
                s.len() == ref_shape.len() && s[0] == ref_shape[0] && s[2..] == ref_shape[2..];
            if !compatible {
                return Err(mismatch("concat_channels", &ref_shape, s));
            }
            axis_len.push(s[1]);
        }
        let n = ref_shape[0];
        let inner: usize = ref_shape[2..].iter().product();
        let total: usize = axis_len.iter().sum();
        let mut data = Vec::with_capacity(n * total * inner);
        for r in 0..n {
            for (&p, &c) in parts.iter().zip(&axis_len) {
                data.extend_from_slice(&self.value(p).data()[r * c * inner..][..c * inner]);
            }
        }
        let mut shape = ref_shape.clone();
        shape[1] = total;
        let out = Tensor::new(&shape, data)?;
        self.push(
            "concat_channels",
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis_len,
            },
            parts,
        )
    }

    /// `x [N, C, T] * s [N, C]`, each channel row scaled by its gate.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let (n, c, t) = self.nct3("scale_channels", x)?;
        if self.shape(s) != [n, c] {
            return Err(mismatch("scale_channels", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .chunks(t)
            .zip(sv)
            .flat_map(|(row, &g)| row.iter().map(move |&v| v * g))
            .collect();
        let out = Tensor::new(self.shape(x), data)?;
        self.push("scale_channels", out, Op::ScaleChannels { x, s }, &[x, s])
    }

    fn check_bn_params(&self, c: usize, gamma: Var, beta: Var, eps: S) -> Result<(), TensorError> {
        if !(eps > S::zero()) {
            return Err(TensorError::InvalidArgument {
                op: "batchnorm",
                detail: format!("eps must be positive, got {eps}"),
            });
        }
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(mismatch("batchnorm", &[c], self.shape(p)));
            }
        }
        Ok(())
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[S],
        inv_std: Vec<S>,
        train: bool,
    ) -> Result<Var, TensorError> {
        let (_, c, t) = self.nct3("batchnorm", x)?;
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let xv = self.value(x).data();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut data = Vec::with_capacity(xv.len());
        for (row, chunk) in xv.chunks(t).enumerate() {
            let ch = row % c;
            for &v in chunk {
                let h = (v - mean[ch]) * inv_std[ch];
                xhat.push(h);
                data.push(gm[ch] * h + bt[ch]);
            }
        }
        let out = Tensor::new(self.shape(x), data)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        self.push("batchnorm", out, op, &[x, gamma, beta])
    }

    /// Batch norm with per-channel statistics over `(N, T)` of this batch
    /// (population variance in the normalisation).
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: S,
    ) -> Result<(Var, BatchStats<S>), TensorError> {
        let (n, c, t) = self.nct3("batchnorm", x)?;
        self.check_bn_params(c, gamma, beta, eps)?;
        let m = n * t;
        let xv = self.value(x).data();
        let mut mean = vec![S::zero(); c];
        for (row, chunk) in xv.chunks(t).enumerate() {
            mean[row % c] = mean[row % c] + chunk.iter().copied().sum::<S>();
        }
        let mf = S::of(m as f64);
        mean.iter_mut().for_each(|v| *v = *v / mf);
        let mut ss = vec![S::zero(); c];
        for (row, chunk) in xv.chunks(t).enumerate() {
            let mu = mean[row % c];
            ss[row % c] = ss[row % c] + chunk.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>();
        }
        let inv_std = ss
            .iter()
            .map(|&s| S::one() / (s / mf + eps).sqrt())
            .collect();
        let unbiased = if m > 1 {
            S::of((m - 1) as f64)
        } else {
            S::one()
        };
        let var = ss.iter().map(|&s| s / unbiased).collect();
        let y = self.bn_apply(x, gamma, beta, &mean.clone(), inv_std, true)?;
        Ok((y, BatchStats { mean, var }))
    }

    /// Batch norm with frozen running statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[S],
        running_var: &[S],
        eps: S,
    ) -> Result<Var, TensorError> {
        let (_, c, _) = self.nct3("batchnorm", x)?;
        self.check_bn_params(c, gamma, beta, eps)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(mismatch(
                "batchnorm running stats",
                &[c],
                &[running_mean.len(), running_var.len()],
            ));
        }
        let inv_std = running_var
            .iter()
            .map(|&v| S::one() / (v + eps).sqrt())
            .collect();
        self.bn_apply(x, gamma, beta, running_mean, inv_std, false)
    }

    /// Keeps `len` frames starting at `start` along the last axis.
    pub fn slice_time(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (_, _, t) = self.nct3("slice_time", x)?;
        if len == 0 || start + len > t {
            return Err(TensorError::InvalidArgument {
                op: "slice_time",
                detail: format!("range {start}..{} outside extent {t}", start + len),
            });
        }
        let data = self
            .value(x)
            .data()
            .chunks(t)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("rank ≥ 2") = len;
        let out = Tensor::new(&shape, data)?;
        self.push("slice_time", out, Op::SliceTime { x, start }, &[x])
    }

    /// Zero-pads the last axis.
    pub fn pad_time(&mut self, x: Var, left: usize, right: usize) -> Result<Var, TensorError> {
        let (_, _, t) = self.nct3("pad_time", x)?;
        let len = left + t + right;
        let mut data = Vec::with_capacity(self.value(x).len() / t * len);
        for row in self.value(x).data().chunks(t) {
            data.extend(std::iter::repeat_n(S::zero(), left));
            data.extend_from_slice(row);
            data.extend(std::iter::repeat_n(S::zero(), right));
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("rank ≥ 2") = len;
        let out = Tensor::new(&shape, data)?;
        self.push("pad_time", out, Op::PadTime { x, left }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, z: Var) -> Result<Var, TensorError> {
        let k = *self.shape(z).last().expect("rank ≥ 1");
        let data = self
            .value(z)
            .data()
            .chunks(k)
            .flat_map(softmax_row)
            .collect();
        let out = Tensor::new(self.shape(z), data)?;
        self.push("softmax", out, Op::Softmax(z), &[z])
    }

    /// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets,
    /// evaluated as `max(z,0) − z·t + ln(1 + e^−|z|)`.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: &Tensor<S>,
    ) -> Result<Var, TensorError> {
        if self.shape(logits) != targets.shape() {
            return Err(mismatch(
                "bce_with_logits",
                self.shape(logits),
                targets.shape(),
            ));
        }
        if let Some(bad) = targets
            .data()
            .iter()
            .find(|&&t| t != S::zero() && t != S::one())
        {
            return Err(TensorError::InvalidArgument {
                op: "bce_with_logits",
                detail: format!("target {bad} is not 0 or 1"),
            });
        }
        let zv = self.value(logits).data();
        let total: S = zv
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| z.max(S::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let out = Tensor::scalar(total / S::of(zv.len() as f64));
        let op = Op::BceWithLogits {
            z: logits,
            targets: targets.data().to_vec(),
        };
        self.push("bce_with_logits", out, op, &[logits])
    }

    /// Mean of `−ln softmax(z)[class]` over rows of `[N, K]` logits.
    pub fn cross_entropy(&mut self, logits: Var, classes: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != classes.len() {
            return Err(mismatch("cross_entropy", s, &[classes.len()]));
        }
        let k = s[1];
        if let Some(&bad) = classes.iter().find(|&&c| c >= k) {
            return Err(TensorError::InvalidArgument {
                op: "cross_entropy",
                detail: format!("class index {bad} out of range for {k} classes"),
            });
        }
        let zv = self.value(logits).data();
        let mut probs = Vec::with_capacity(zv.len());
        let mut total = S::zero();
        for (row, &c) in zv.chunks(k).zip(classes) {
            probs.extend(softmax_row(row));
            total = total + neg_log_softmax(row, c);
        }
        let out = Tensor::scalar(total / S::of(classes.len() as f64));
        let op = Op::CrossEntropy {
            z: logits,
            probs,
            classes: classes.to_vec(),
        };
        self.push("cross_entropy", out, op, &[logits])
    }
}

pub(crate) fn softmax_row<S: Scalar>(row: &[S]) -> Vec<S> {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = row.iter().map(|&v| (v - m).exp()).collect();
    let s: S = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `ln Σ e^{z_j} − z_c`, with the sum split around the row maximum so that
/// confident rows keep their relative precision.
fn neg_log_softmax<S: Scalar>(row: &[S], class: usize) -> S {
    let (arg, m) = row
        .iter()
        .copied()
        .enumerate()
        .fold(
            (0, S::neg_infinity()),
            |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
        );
    let rest: S = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    (m - row[class]) + rest.ln_1p()
}
