//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Ops append
//! nodes, so node indices are already a topological order and
//! [`Tape::backward`] simply walks them in reverse.

use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    MeanTime(Var),
    MaxTime {
        x: Var,
        arg: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool1d {
        x: Var,
        arg: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis_len: Vec<usize>,
    },
    ScaleChannels {
        x: Var,
        s: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
        train: bool,
    },
    SliceTime {
        x: Var,
        start: usize,
    },
    PadTime {
        x: Var,
        left: usize,
    },
    Softmax(Var),
    BceWithLogits {
        z: Var,
        targets: Vec<S>,
    },
    CrossEntropy {
        z: Var,
        probs: Vec<S>,
        classes: Vec<usize>,
    },
}

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) op: Op<S>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<S>>,
}

/// Recording of one forward computation.
pub struct Tape<S> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: gradients accumulate into it on [`Tape::backward`].
    pub fn param(&mut self, t: Tensor<S>) -> Result<Var, TensorError> {
        self.leaf(t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Result<Var, TensorError> {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<S>, requires_grad: bool) -> Result<Var, TensorError> {
        if !t.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        Ok(self.push_unchecked(t, Op::Leaf, requires_grad))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape tracks value"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push_unchecked(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends an op result. When no input needs a gradient the node is
    /// stored as a plain constant and the op record is dropped.
    pub(crate) fn push(
        &mut self,
        name: &'static str,
        value: Tensor<S>,
        op: Op<S>,
        inputs: &[Var],
    ) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    /// Propagates `d root / d leaf` into every trainable leaf reachable from
    /// `root`. Gradients add onto whatever a previous call left behind.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        let root_node = &self.nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: root_node.value.shape().to_vec(),
            });
        }
        if !root_node.requires_grad {
            return Err(TensorError::DetachedRoot);
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![S::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &d)| *a = *a + d),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], v: Var, contrib: Vec<S>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &d)| *a = *a + d),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backprop(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&d| -d).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                self.accumulate(grads, *a, g.iter().zip(bv).map(|(&d, &y)| d * y).collect());
                self.accumulate(grads, *b, g.iter().zip(av).map(|(&d, &x)| d * x).collect());
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.iter().map(|&d| d * *c).collect());
            }
            Op::Relu(a) => {
                let x = val(*a);
                let dx = g
                    .iter()
                    .zip(x)
                    .map(|(&d, &x)| if x > S::zero() { d } else { S::zero() })
                    .collect();
                self.accumulate(grads, *a, dx);
            }
            Op::Sigmoid(a) => {
                let dx = g
                    .iter()
                    .zip(out)
                    .map(|(&d, &y)| d * y * (S::one() - y))
                    .collect();
                self.accumulate(grads, *a, dx);
            }
            Op::Exp(a) => {
                let dx = g.iter().zip(out).map(|(&d, &y)| d * y).collect();
                self.accumulate(grads, *a, dx);
            }
            Op::Log(a) => {
                let dx = g.iter().zip(val(*a)).map(|(&d, &x)| d / x).collect();
                self.accumulate(grads, *a, dx);
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                self.accumulate(grads, *a, vec![g[0] / S::of(n as f64); n]);
            }
            Op::MeanTime(a) => {
                let (_, _, t) = self.nodes[a.0].value.nct().expect("checked in forward");
                let inv = S::one() / S::of(t as f64);
                let dx = g
                    .iter()
                    .flat_map(|&d| std::iter::repeat_n(d * inv, t))
                    .collect();
                self.accumulate(grads, *a, dx);
            }
            Op::MaxTime { x, arg } | Op::MaxPool1d { x, arg } => {
                let mut dx = vec![S::zero(); val(*x).len()];
                for (&d, &j) in g.iter().zip(arg) {
                    dx[j] = dx[j] + d;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Linear { x, w, b } => {
                let xs = self.nodes[x.0].value.shape();
                let (n, f) = (xs[0], xs[1]);
                let o = self.nodes[w.0].value.shape()[0];
                let (xv, wv) = (val(*x), val(*w));
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![S::zero(); n * f];
                    for r in 0..n {
                        for j in 0..o {
                            let d = g[r * o + j];
                            let wrow = &wv[j * f..][..f];
                            for (dxv, &wij) in dx[r * f..][..f].iter_mut().zip(wrow) {
                                *dxv = *dxv + d * wij;
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.nodes[w.0].requires_grad {
                    let mut dw = vec![S::zero(); o * f];
                    for r in 0..n {
                        let xrow = &xv[r * f..][..f];
                        for j in 0..o {
                            let d = g[r * o + j];
                            for (dwv, &xi) in dw[j * f..][..f].iter_mut().zip(xrow) {
                                *dwv = *dwv + d * xi;
                            }
                        }
                    }
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    let mut db = vec![S::zero(); o];
                    for r in 0..n {
                        for j in 0..o {
                            db[j] = db[j] + g[r * o + j];
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv1d_backward(geom, val(*x), val(*w), g);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Concat { parts, axis_len } => {
                // Output is [N, ΣC(, T)]; `inner` is T (or 1 for rank 2).
                let shape = node.value.shape();
                let n = shape[0];
                let total: usize = axis_len.iter().sum();
                let inner = node.value.len() / (n * total);
                let mut offset = 0;
                for (p, &c) in parts.iter().zip(axis_len) {
                    let mut dp = Vec::with_capacity(n * c * inner);
                    for r in 0..n {
                        let start = (r * total + offset) * inner;
                        dp.extend_from_slice(&g[start..start + c * inner]);
                    }
                    self.accumulate(grads, *p, dp);
                    offset += c;
                }
            }
            Op::ScaleChannels { x, s } => {
                let (n, c, t) = self.nodes[x.0].value.nct().expect("checked in forward");
                let (xv, sv) = (val(*x), val(*s));
                let mut dx = vec![S::zero(); n * c * t];
                let mut ds = vec![S::zero(); n * c];
                for row in 0..n * c {
                    let gr = &g[row * t..][..t];
                    let xr = &xv[row * t..][..t];
                    let mut acc = S::zero();
                    for ((dxv, &d), &xi) in dx[row * t..][..t].iter_mut().zip(gr).zip(xr) {
                        *dxv = d * sv[row];
                        acc = acc + d * xi;
                    }
                    ds[row] = acc;
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *s, ds);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, t) = self.nodes[x.0].value.nct().expect("checked in forward");
                let gm = val(*gamma);
                let m = S::of((n * t) as f64);
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                for r in 0..n {
                    for ch in 0..c {
                        let base = (r * c + ch) * t;
                        for i in base..base + t {
                            dgamma[ch] = dgamma[ch] + g[i] * xhat[i];
                            dbeta[ch] = dbeta[ch] + g[i];
                        }
                    }
                }
                let mut dx = vec![S::zero(); n * c * t];
                for ch in 0..c {
                    let k = gm[ch] * inv_std[ch];
                    for r in 0..n {
                        let base = (r * c + ch) * t;
                        for i in base..base + t {
                            dx[i] = if *train {
                                // dx = γ·inv/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
                                k / m * (m * g[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::SliceTime { x, start } => {
                let (n, c, t) = self.nodes[x.0].value.nct().expect("checked in forward");
                let len = node.value.nct().expect("rank 2/3").2;
                let mut dx = vec![S::zero(); n * c * t];
                for row in 0..n * c {
                    dx[row * t + start..][..len].copy_from_slice(&g[row * len..][..len]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::PadTime { x, left } => {
                let (n, c, t) = self.nodes[x.0].value.nct().expect("checked in forward");
                let len = node.value.nct().expect("rank 2/3").2;
                let mut dx = Vec::with_capacity(n * c * t);
                for row in 0..n * c {
                    dx.extend_from_slice(&g[row * len + left..][..t]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(z) => {
                let k = *node.value.shape().last().expect("rank ≥ 1");
                let mut dz = vec![S::zero(); out.len()];
                for (r, (pr, gr)) in out.chunks(k).zip(g.chunks(k)).enumerate() {
                    let dot: S = pr.iter().zip(gr).map(|(&p, &d)| p * d).sum();
                    for j in 0..k {
                        dz[r * k + j] = pr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *z, dz);
            }
            Op::BceWithLogits { z, targets } => {
                let zv = val(*z);
                let scale = g[0] / S::of(zv.len() as f64);
                let dz = zv
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                    .collect();
                self.accumulate(grads, *z, dz);
            }
            Op::CrossEntropy { z, probs, classes } => {
                let n = classes.len();
                let k = probs.len() / n;
                let scale = g[0] / S::of(n as f64);
                let mut dz: Vec<S> = probs.iter().map(|&p| p * scale).collect();
                for (r, &c) in classes.iter().enumerate() {
                    dz[r * k + c] = dz[r * k + c] - scale;
                }
                self.accumulate(grads, *z, dz);
            }
        }
    }

    /// Smallest distance of any recorded ReLU input from zero, or any
    /// max-pool window's winner from its runner-up. Finite-difference checks
    /// are only meaningful when this is comfortably larger than the step.
    ///
    /// Ties between exact zeros are skipped: they come from ReLU clamping,
    /// where the window is flat as long as the ReLU margins hold.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &v in self.nodes[a.0].value.data() {
                        margin = margin.min(v.f64().abs());
                    }
                }
                Op::MaxPool1d { x, arg } | Op::MaxTime { x, arg } => {
                    let xs = self.nodes[x.0].value.data();
                    let (_, _, t) = self.nodes[x.0].value.nct().expect("rank 2/3");
                    let out_t = node.value.shape().last().copied().unwrap_or(1);
                    let window = match node.op {
                        Op::MaxTime { .. } => t,
                        _ => t / out_t,
                    };
                    for (o, &j) in arg.iter().enumerate() {
                        let row = o / out_t;
                        let start = row * t + (o % out_t) * window;
                        for i in start..start + window {
                            if i != j && !(xs[i].is_zero() && xs[j].is_zero()) {
                                margin = margin.min((xs[j] - xs[i]).f64().abs());
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

pub(crate) fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}
