use super::layers::{
    basic_block, batchnorm, rese2_block, BasicBlock, BatchNormLayer, Mode, Rese2Block, SeLayer,
};
use super::params::{ModelParams, ParamRole};
use super::{BlockKind, ConfigError, ModelConfig, OutputKind};
use crate::engine::{BatchStats, Scalar, Tape, Tensor, TensorError, Var};

/// A configured network and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    config: ModelConfig,
    params: ModelParams<S>,
}

/// Parameters placed on a tape, indexed like [`ModelParams`]. Running
/// statistics are not placed on the tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, index: usize) -> Option<Var> {
        self.vars[index]
    }
}

/// Pending running-statistic update for one batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<S> {
    mean_index: usize,
    var_index: usize,
    stats: BatchStats<S>,
}

#[derive(Clone, Debug)]
pub struct Forward<S> {
    /// Activation after the stem (index 0) and after every block.
    pub layers: Vec<Var>,
    /// `[N, concat_width]` pooled multi-level features.
    pub features: Option<Var>,
    pub logits: Option<Var>,
    /// Sigmoid or softmax of the logits, per the head's output kind.
    pub scores: Option<Var>,
    /// SE gates of every ReSE-2 block, `[N, C]` each.
    pub gates: Vec<Var>,
    pub bn_updates: Vec<BnUpdate<S>>,
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams<S>) -> Result<Self, ConfigError> {
        config.validate()?;
        let named = params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        let params = ModelParams::from_named(&config, named)?;
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<S> {
        &mut self.params
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Pushes every trainable tensor onto `tape`; with `requires_grad` they
    /// become gradient-receiving leaves.
    pub fn bind(&self, tape: &mut Tape<S>, requires_grad: bool) -> Result<Bound, TensorError> {
        self.bind_where(tape, requires_grad, |_| true)
    }

    /// Binds only the stem and the first `blocks` blocks, enough for
    /// [`forward_to`](Self::forward_to) up to that depth.
    pub fn bind_prefix(
        &self,
        tape: &mut Tape<S>,
        requires_grad: bool,
        blocks: usize,
    ) -> Result<Bound, TensorError> {
        self.bind_where(tape, requires_grad, |name| {
            name.starts_with("stem.")
                || name
                    .strip_prefix("blocks.")
                    .and_then(|rest| rest.split('.').next())
                    .and_then(|i| i.parse::<usize>().ok())
                    .is_some_and(|i| i < blocks)
        })
    }

    /// Uses existing tape variables, one per trainable parameter in
    /// parameter order, instead of fresh leaves.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<Bound, TensorError> {
        let expected = self
            .params
            .iter()
            .filter(|p| p.role == ParamRole::Trainable)
            .count();
        if vars.len() != expected {
            return Err(TensorError::InvalidArgument {
                op: "bind_vars",
                detail: format!("{} variables for {expected} trainable tensors", vars.len()),
            });
        }
        let mut it = vars.iter();
        let vars = self
            .params
            .iter()
            .map(|p| match p.role {
                ParamRole::Trainable => it.next().copied(),
                ParamRole::RunningStat => None,
            })
            .collect();
        Ok(Bound { vars })
    }

    fn bind_where(
        &self,
        tape: &mut Tape<S>,
        requires_grad: bool,
        keep: impl Fn(&str) -> bool,
    ) -> Result<Bound, TensorError> {
        let vars = self
            .params
            .iter()
            .map(|p| match p.role {
                ParamRole::Trainable if keep(&p.name) => {
                    tape.leaf(p.value.clone(), requires_grad).map(Some)
                }
                _ => Ok(None),
            })
            .collect::<Result<_, _>>()?;
        Ok(Bound { vars })
    }

    fn var(&self, bound: &Bound, name: &str) -> Var {
        let i = self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("layout has no {name}"));
        bound.vars[i].unwrap_or_else(|| panic!("{name} is not bound"))
    }

    fn bn<'a>(&'a self, bound: &Bound, prefix: &str) -> (BatchNormLayer<'a, S>, (usize, usize)) {
        let mean_index = self
            .params
            .position(&format!("{prefix}.running_mean"))
            .expect("layout");
        let var_index = self
            .params
            .position(&format!("{prefix}.running_var"))
            .expect("layout");
        let layer = BatchNormLayer {
            gamma: self.var(bound, &format!("{prefix}.gamma")),
            beta: self.var(bound, &format!("{prefix}.beta")),
            running_mean: self.params.at(mean_index).value.data(),
            running_var: self.params.at(var_index).value.data(),
            eps: S::of(self.config.bn_eps),
        };
        (layer, (mean_index, var_index))
    }

    /// Full forward pass of `x` (`[N, 1, T]` or `[1, T]`).
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        x: Var,
        mode: Mode,
    ) -> Result<Forward<S>, TensorError> {
        self.run(tape, bound, x, mode, None)
    }

    /// Forward pass stopping after the stem (`depth == 0`) or after block
    /// `depth`; the head is not evaluated.
    pub fn forward_to(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        x: Var,
        mode: Mode,
        depth: usize,
    ) -> Result<Forward<S>, TensorError> {
        if depth > self.config.blocks.len() {
            return Err(TensorError::InvalidArgument {
                op: "forward_to",
                detail: format!("depth {depth} exceeds {} blocks", self.config.blocks.len()),
            });
        }
        self.run(tape, bound, x, mode, Some(depth))
    }

    fn run(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        x: Var,
        mode: Mode,
        stop: Option<usize>,
    ) -> Result<Forward<S>, TensorError> {
        let cfg = &self.config;
        let mut updates = Vec::new();
        let mut gates = Vec::new();
        let mut record = |idx: (usize, usize), stats: Option<BatchStats<S>>| {
            if let Some(stats) = stats {
                updates.push(BnUpdate {
                    mean_index: idx.0,
                    var_index: idx.1,
                    stats,
                });
            }
        };

        let w = self.var(bound, "stem.conv.weight");
        let mut h = if cfg.stem.bn_relu {
            let y = tape.conv1d(x, w, None, cfg.stem.stride, 0)?;
            let (bn, idx) = self.bn(bound, "stem.bn");
            let (y, stats) = batchnorm(tape, y, &bn, mode)?;
            record(idx, stats);
            tape.relu(y)?
        } else {
            let b = self.var(bound, "stem.conv.bias");
            tape.conv1d(x, w, Some(b), cfg.stem.stride, 0)?
        };
        let mut layers = vec![h];

        for (i, spec) in cfg.blocks.iter().enumerate() {
            if stop.is_some_and(|d| i >= d) {
                break;
            }
            let p = format!("blocks.{i}");
            let out = match spec.kind {
                BlockKind::Basic => {
                    let (bn, idx) = self.bn(bound, &format!("{p}.bn"));
                    let block = BasicBlock {
                        conv: self.var(bound, &format!("{p}.conv.weight")),
                        bn,
                        pool: spec.pool_size,
                    };
                    let out = basic_block(tape, h, &block, mode)?;
                    for s in out.stats.iter().cloned() {
                        record(idx, Some(s));
                    }
                    out
                }
                BlockKind::Rese2 => {
                    let (bn1, idx1) = self.bn(bound, &format!("{p}.bn1"));
                    let (bn2, idx2) = self.bn(bound, &format!("{p}.bn2"));
                    let proj = (cfg.block_in_channels(i) != spec.filters).then(|| {
                        (
                            self.var(bound, &format!("{p}.proj.weight")),
                            self.var(bound, &format!("{p}.proj.bias")),
                        )
                    });
                    let block = Rese2Block {
                        conv1: self.var(bound, &format!("{p}.conv1.weight")),
                        bn1,
                        conv2: self.var(bound, &format!("{p}.conv2.weight")),
                        bn2,
                        se: SeLayer {
                            fc1_w: self.var(bound, &format!("{p}.se.fc1.weight")),
                            fc1_b: self.var(bound, &format!("{p}.se.fc1.bias")),
                            fc2_w: self.var(bound, &format!("{p}.se.fc2.weight")),
                            fc2_b: self.var(bound, &format!("{p}.se.fc2.bias")),
                        },
                        proj,
                        pool: spec.pool_size,
                    };
                    let out = rese2_block(tape, h, &block, mode)?;
                    for (s, idx) in out.stats.iter().cloned().zip([idx1, idx2]) {
                        record(idx, Some(s));
                    }
                    out
                }
            };
            gates.extend(out.gates);
            h = out.out;
            layers.push(h);
        }

        if stop.is_some() {
            return Ok(Forward {
                layers,
                features: None,
                logits: None,
                scores: None,
                gates,
                bn_updates: updates,
            });
        }

        let pooled = cfg
            .concat_taps
            .iter()
            .map(|&i| tape.max_time(layers[i + 1]))
            .collect::<Result<Vec<_>, _>>()?;
        let features = if pooled.len() == 1 {
            pooled[0]
        } else {
            tape.concat_channels(&pooled)?
        };
        let logits = if cfg.head.hidden > 0 {
            let z = tape.linear(
                features,
                self.var(bound, "head.fc1.weight"),
                Some(self.var(bound, "head.fc1.bias")),
            )?;
            let z = tape.relu(z)?;
            tape.linear(
                z,
                self.var(bound, "head.fc2.weight"),
                Some(self.var(bound, "head.fc2.bias")),
            )?
        } else {
            tape.linear(
                features,
                self.var(bound, "head.fc.weight"),
                Some(self.var(bound, "head.fc.bias")),
            )?
        };
        let scores = match cfg.head.output {
            OutputKind::SigmoidMultilabel => tape.sigmoid(logits)?,
            OutputKind::SoftmaxMulticlass => tape.softmax(logits)?,
        };
        Ok(Forward {
            layers,
            features: Some(features),
            logits: Some(logits),
            scores: Some(scores),
            gates,
            bn_updates: updates,
        })
    }

    /// Folds batch statistics into the running estimates:
    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<S>]) {
        let m = S::of(self.config.bn_momentum);
        let keep = S::one() - m;
        for u in updates {
            for (idx, batch) in [(u.mean_index, &u.stats.mean), (u.var_index, &u.stats.var)] {
                for (r, &b) in self.params.value_mut(idx).data_mut().iter_mut().zip(batch) {
                    *r = keep * *r + m * b;
                }
            }
        }
    }

    /// Inference-mode scores for a `[N, 1, T]` batch, as `[N, n_classes]`.
    pub fn predict(&self, batch: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let x = tape.constant(batch.clone())?;
        let fwd = self.forward(&mut tape, &bound, x, Mode::Infer)?;
        Ok(tape
            .value(fwd.scores.expect("full forward has scores"))
            .clone())
    }
}
