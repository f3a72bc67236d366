//! Batch norm, squeeze-and-excitation and the two building blocks, written
//! against tape variables so that the same code serves training, inference
//! and input optimisation.

use crate::engine::{BatchStats, Scalar, Tape, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are reported for update.
    Train,
    /// Frozen running statistics.
    Infer,
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNormLayer<'a, S> {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: &'a [S],
    pub running_var: &'a [S],
    pub eps: S,
}

pub fn batchnorm<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    bn: &BatchNormLayer<'_, S>,
    mode: Mode,
) -> Result<(Var, Option<BatchStats<S>>), TensorError> {
    match mode {
        Mode::Train => {
            let (y, stats) = tape.batchnorm_train(x, bn.gamma, bn.beta, bn.eps)?;
            Ok((y, Some(stats)))
        }
        Mode::Infer => {
            let y = tape.batchnorm_infer(
                x,
                bn.gamma,
                bn.beta,
                bn.running_mean,
                bn.running_var,
                bn.eps,
            )?;
            Ok((y, None))
        }
    }
}

/// Convolution padded so that stride-1 output length equals input length
/// (the extra frame of an even kernel goes on the right).
pub fn conv_same<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    w: Var,
    b: Option<Var>,
) -> Result<Var, TensorError> {
    let k = *tape.value(w).shape().last().unwrap_or(&1);
    let left = (k.saturating_sub(1)) / 2;
    tape.conv1d_padded(x, w, b, 1, left, k.saturating_sub(1) - left)
}

#[derive(Clone, Copy, Debug)]
pub struct SeLayer {
    /// `[C/r, C]` and `[C/r]`.
    pub fc1_w: Var,
    pub fc1_b: Var,
    /// `[C, C/r]` and `[C]`.
    pub fc2_w: Var,
    pub fc2_b: Var,
}

/// Squeeze (temporal mean per channel), excite (FC → ReLU → FC → sigmoid),
/// then rescale each channel of `u` by its gate. Returns the rescaled map
/// and the `[N, C]` gates.
pub fn se_module<S: Scalar>(
    tape: &mut Tape<S>,
    u: Var,
    se: &SeLayer,
) -> Result<(Var, Var), TensorError> {
    let z = tape.mean_time(u)?;
    let h = tape.linear(z, se.fc1_w, Some(se.fc1_b))?;
    let h = tape.relu(h)?;
    let s = tape.linear(h, se.fc2_w, Some(se.fc2_b))?;
    let gates = tape.sigmoid(s)?;
    let out = tape.scale_channels(u, gates)?;
    Ok((out, gates))
}

#[derive(Clone, Copy, Debug)]
pub struct BasicBlock<'a, S> {
    pub conv: Var,
    pub bn: BatchNormLayer<'a, S>,
    pub pool: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Rese2Block<'a, S> {
    pub conv1: Var,
    pub bn1: BatchNormLayer<'a, S>,
    pub conv2: Var,
    pub bn2: BatchNormLayer<'a, S>,
    pub se: SeLayer,
    /// 1-sized convolution (weight, bias) for the residual path when the
    /// block changes channel count.
    pub proj: Option<(Var, Var)>,
    pub pool: usize,
}

#[derive(Clone, Debug)]
pub struct BlockOutput<S> {
    pub out: Var,
    /// One entry per batch norm, in order, in training mode.
    pub stats: Vec<BatchStats<S>>,
    pub gates: Option<Var>,
}

/// `maxpool(relu(bn(conv(x))))`.
pub fn basic_block<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    block: &BasicBlock<'_, S>,
    mode: Mode,
) -> Result<BlockOutput<S>, TensorError> {
    let y = conv_same(tape, x, block.conv, None)?;
    let (y, stats) = batchnorm(tape, y, &block.bn, mode)?;
    let y = tape.relu(y)?;
    let out = tape.maxpool1d(y, block.pool)?;
    Ok(BlockOutput {
        out,
        stats: stats.into_iter().collect(),
        gates: None,
    })
}

/// `maxpool(relu(se(bn2(conv2(relu(bn1(conv1(x)))))) + residual(x)))`.
pub fn rese2_block<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    block: &Rese2Block<'_, S>,
    mode: Mode,
) -> Result<BlockOutput<S>, TensorError> {
    let y = conv_same(tape, x, block.conv1, None)?;
    let (y, s1) = batchnorm(tape, y, &block.bn1, mode)?;
    let y = tape.relu(y)?;
    let y = conv_same(tape, y, block.conv2, None)?;
    let (y, s2) = batchnorm(tape, y, &block.bn2, mode)?;
    let (y, gates) = se_module(tape, y, &block.se)?;
    let residual = match block.proj {
        Some((w, b)) => tape.conv1d(x, w, Some(b), 1, 0)?,
        None => {
            let (xs, ys) = (tape.value(x).shape(), tape.value(y).shape());
            if xs != ys {
                return Err(TensorError::ShapeMismatch {
                    op: "rese2 residual",
                    left: xs.to_vec(),
                    right: ys.to_vec(),
                });
            }
            x
        }
    };
    let y = tape.add(y, residual)?;
    let y = tape.relu(y)?;
    let out = tape.maxpool1d(y, block.pool)?;
    Ok(BlockOutput {
        out,
        stats: s1.into_iter().chain(s2).collect(),
        gates: Some(gates),
    })
}
