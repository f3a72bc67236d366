//! Named parameter storage and initialisation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BlockKind, ConfigError, ModelConfig};
use crate::engine::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    /// Updated by the optimizer.
    Trainable,
    /// Batch-norm running statistic, updated by moving average.
    RunningStat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor<S>,
}

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    params: Vec<Param<S>>,
    index: BTreeMap<String, usize>,
}

/// Name, role and shape of every tensor a config requires, in canonical
/// order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, ParamRole, Vec<usize>)> {
    let t = ParamRole::Trainable;
    let mut out = Vec::new();
    let push_bn = |out: &mut Vec<(String, ParamRole, Vec<usize>)>, prefix: &str, c: usize| {
        out.push((format!("{prefix}.gamma"), t, vec![c]));
        out.push((format!("{prefix}.beta"), t, vec![c]));
        out.push((
            format!("{prefix}.running_mean"),
            ParamRole::RunningStat,
            vec![c],
        ));
        out.push((
            format!("{prefix}.running_var"),
            ParamRole::RunningStat,
            vec![c],
        ));
    };
    let stem = &cfg.stem;
    out.push((
        "stem.conv.weight".into(),
        t,
        vec![stem.filters, 1, stem.kernel],
    ));
    if stem.bn_relu {
        push_bn(&mut out, "stem.bn", stem.filters);
    } else {
        out.push(("stem.conv.bias".into(), t, vec![stem.filters]));
    }
    for (i, b) in cfg.blocks.iter().enumerate() {
        let cin = cfg.block_in_channels(i);
        let c = b.filters;
        let k = b.conv_kernel;
        let p = format!("blocks.{i}");
        match b.kind {
            BlockKind::Basic => {
                out.push((format!("{p}.conv.weight"), t, vec![c, cin, k]));
                push_bn(&mut out, &format!("{p}.bn"), c);
            }
            BlockKind::Rese2 => {
                let r = b.se_reduction.unwrap_or(1);
                out.push((format!("{p}.conv1.weight"), t, vec![c, cin, k]));
                push_bn(&mut out, &format!("{p}.bn1"), c);
                out.push((format!("{p}.conv2.weight"), t, vec![c, c, k]));
                push_bn(&mut out, &format!("{p}.bn2"), c);
                out.push((format!("{p}.se.fc1.weight"), t, vec![c / r, c]));
                out.push((format!("{p}.se.fc1.bias"), t, vec![c / r]));
                out.push((format!("{p}.se.fc2.weight"), t, vec![c, c / r]));
                out.push((format!("{p}.se.fc2.bias"), t, vec![c]));
                if cin != c {
                    out.push((format!("{p}.proj.weight"), t, vec![c, cin, 1]));
                    out.push((format!("{p}.proj.bias"), t, vec![c]));
                }
            }
        }
    }
    let d = cfg.concat_width();
    if cfg.head.hidden > 0 {
        out.push(("head.fc1.weight".into(), t, vec![cfg.head.hidden, d]));
        out.push(("head.fc1.bias".into(), t, vec![cfg.head.hidden]));
        out.push((
            "head.fc2.weight".into(),
            t,
            vec![cfg.head.n_classes, cfg.head.hidden],
        ));
        out.push(("head.fc2.bias".into(), t, vec![cfg.head.n_classes]));
    } else {
        out.push(("head.fc.weight".into(), t, vec![cfg.head.n_classes, d]));
        out.push(("head.fc.bias".into(), t, vec![cfg.head.n_classes]));
    }
    out
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))` for a weight shape.
fn glorot_bound(shape: &[usize]) -> f64 {
    let receptive: usize = shape[2..].iter().product();
    let fan_in = shape[1] * receptive;
    let fan_out = shape[0] * receptive;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<S: Scalar> ModelParams<S> {
    /// Fresh parameters: Glorot-uniform weights, unit gamma and running
    /// variance, zeros elsewhere.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_layout(cfg)
            .into_iter()
            .map(|(name, role, shape)| {
                let value = if name.ends_with(".weight") {
                    let bound = glorot_bound(&shape);
                    let n: usize = shape.iter().product();
                    let data = (0..n)
                        .map(|_| S::of(rng.random_range(-bound..bound)))
                        .collect();
                    Tensor::new(&shape, data).expect("layout shapes are positive")
                } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                    Tensor::ones(&shape)
                } else {
                    Tensor::zeros(&shape)
                };
                Param { name, role, value }
            })
            .collect();
        Ok(Self::from_vec(params))
    }

    fn from_vec(params: Vec<Param<S>>) -> Self {
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        ModelParams { params, index }
    }

    /// Assembles parameters from named tensors, checking them against the
    /// layout a config requires.
    pub fn from_named(
        cfg: &ModelConfig,
        mut named: BTreeMap<String, Tensor<S>>,
    ) -> Result<Self, ConfigError> {
        let mut params = Vec::new();
        for (name, role, shape) in param_layout(cfg) {
            let value = named
                .remove(&name)
                .ok_or_else(|| ConfigError::Params(format!("missing tensor {name}")))?;
            if value.shape() != shape.as_slice() {
                return Err(ConfigError::Params(format!(
                    "tensor {name} has shape {:?}, config expects {shape:?}",
                    value.shape()
                )));
            }
            params.push(Param { name, role, value });
        }
        if let Some(extra) = named.keys().next() {
            return Err(ConfigError::Params(format!("unexpected tensor {extra}")));
        }
        let out = Self::from_vec(params);
        out.check_running_var()?;
        Ok(out)
    }

    fn check_running_var(&self) -> Result<(), ConfigError> {
        for p in self
            .params
            .iter()
            .filter(|p| p.name.ends_with(".running_var"))
        {
            if p.value.data().iter().any(|&v| !(v > S::zero())) {
                return Err(ConfigError::Params(format!(
                    "{} must be strictly positive",
                    p.name
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.position(name).map(|i| &self.params[i].value)
    }

    pub fn at(&self, i: usize) -> &Param<S> {
        &self.params[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor<S> {
        &mut self.params[i].value
    }

    /// `(layout index, value)` of every trainable tensor, in layout order.
    pub fn trainable_values_mut(&mut self) -> impl Iterator<Item = (usize, &mut Tensor<S>)> {
        self.params
            .iter_mut()
            .enumerate()
            .filter(|(_, p)| p.role == ParamRole::Trainable)
            .map(|(i, p)| (i, &mut p.value))
    }

    /// Total scalar count of trainable tensors.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.role == ParamRole::Trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams::from_vec(
            self.params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    role: p.role,
                    value: p.value.cast(),
                })
                .collect(),
        )
    }
}
