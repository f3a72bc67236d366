use serde::{Deserialize, Serialize};

use crate::engine::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    SgdMomentum {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::SgdMomentum {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::SgdMomentum { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let lr = self.lr();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(format!(
                "learning rate must be finite and non-negative, got {lr}"
            ));
        }
        match *self {
            OptimizerConfig::SgdMomentum {
                momentum,
                weight_decay,
                ..
            } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(format!("momentum must lie in [0, 1), got {momentum}"));
                }
                if !(weight_decay >= 0.0) {
                    return Err(format!(
                        "weight_decay must be non-negative, got {weight_decay}"
                    ));
                }
            }
            OptimizerConfig::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
                ..
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(format!("betas must lie in [0, 1), got ({beta1}, {beta2})"));
                }
                if !(eps > 0.0) {
                    return Err(format!("eps must be positive, got {eps}"));
                }
                if !(weight_decay >= 0.0) {
                    return Err(format!(
                        "weight_decay must be non-negative, got {weight_decay}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// First-order optimizer with per-slot state. Slots are identified by the
/// position of a tensor in the sequence passed to [`Optimizer::step`].
#[derive(Clone, Debug)]
pub struct Optimizer<S> {
    config: OptimizerConfig,
    lr: f64,
    t: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            lr: config.lr(),
            config,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every `(parameter, gradient)` pair. Weight decay is
    /// added to the gradient as `g + λ·p`.
    pub fn step<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a mut [S], &'a [S])>) {
        self.t += 1;
        let lr = S::of(self.lr);
        for (slot, (p, g)) in pairs.into_iter().enumerate() {
            assert_eq!(
                p.len(),
                g.len(),
                "parameter and gradient lengths differ in slot {slot}"
            );
            if self.first.len() <= slot {
                self.first.resize(slot + 1, Vec::new());
                self.second.resize(slot + 1, Vec::new());
            }
            if self.first[slot].len() != p.len() {
                self.first[slot] = vec![S::zero(); p.len()];
            }
            match self.config {
                OptimizerConfig::SgdMomentum {
                    momentum,
                    weight_decay,
                    ..
                } => {
                    let (mu, wd) = (S::of(momentum), S::of(weight_decay));
                    for ((p, &g), v) in p.iter_mut().zip(g).zip(self.first[slot].iter_mut()) {
                        let g = g + wd * *p;
                        *v = mu * *v + g;
                        *p = *p - lr * *v;
                    }
                }
                OptimizerConfig::Adam {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                    ..
                } => {
                    if self.second[slot].len() != p.len() {
                        self.second[slot] = vec![S::zero(); p.len()];
                    }
                    let (b1, b2, eps, wd) =
                        (S::of(beta1), S::of(beta2), S::of(eps), S::of(weight_decay));
                    let c1 = S::one() - S::of(beta1.powi(self.t as i32));
                    let c2 = S::one() - S::of(beta2.powi(self.t as i32));
                    let state = self.first[slot]
                        .iter_mut()
                        .zip(self.second[slot].iter_mut());
                    for ((p, &g), (m, v)) in p.iter_mut().zip(g).zip(state) {
                        let g = g + wd * *p;
                        *m = b1 * *m + (S::one() - b1) * g;
                        *v = b2 * *v + (S::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
