use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{VizConfig, VizError};
use crate::engine::{Tape, Tensor, TensorError, Var};
use crate::nn::{Mode, Model};

/// Something whose channel activations can be computed for a single
/// waveform on a tape.
pub trait Probe: Sync {
    fn n_filters(&self) -> usize;

    /// `[1, C, T]` activations for `x` of shape `[1, 1, L]`.
    fn activations(&self, tape: &mut Tape<f64>, x: Var) -> Result<Var, TensorError>;
}

/// Activations of a model at `depth` (0 = stem) in inference mode.
pub struct LayerProbe {
    model: Model<f64>,
    depth: usize,
}

impl LayerProbe {
    pub fn new(model: &Model<f32>, depth: usize) -> Result<Self, VizError> {
        let blocks = model.config().blocks.len();
        if depth > blocks {
            return Err(VizError::Invalid(format!(
                "layer {} does not exist; the model has layers 1..={}",
                depth + 1,
                blocks + 1
            )));
        }
        Ok(LayerProbe {
            model: model.cast(),
            depth,
        })
    }
}

impl Probe for LayerProbe {
    fn n_filters(&self) -> usize {
        let cfg = self.model.config();
        match self.depth {
            0 => cfg.stem.filters,
            d => cfg.blocks[d - 1].filters,
        }
    }

    fn activations(&self, tape: &mut Tape<f64>, x: Var) -> Result<Var, TensorError> {
        let bound = self.model.bind_prefix(tape, false, self.depth)?;
        let out = self
            .model
            .forward_to(tape, &bound, x, Mode::Infer, self.depth)?;
        Ok(*out
            .layers
            .last()
            .expect("forward_to returns the stem output at least"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Maximization {
    pub filter: usize,
    pub x: Vec<f64>,
    /// Objective before the first step and after every step.
    pub trace: Vec<f64>,
    /// The activation term had an identically zero gradient; `x` was left
    /// where it was.
    pub dead: bool,
}

/// Mean activation and its gradient with respect to `x`.
fn activation_term(
    probe: &dyn Probe,
    filter: usize,
    x: &[f64],
) -> Result<(f64, Vec<f64>), TensorError> {
    let mut tape = Tape::new();
    let xv = tape.param(Tensor::new(&[1, 1, x.len()], x.to_vec())?)?;
    let act = probe.activations(&mut tape, xv)?;
    let pooled = tape.mean_time(act)?;
    let c = tape.value(pooled).len();
    let mut mask = vec![0.0; c];
    mask[filter] = 1.0;
    let mask = tape.constant(Tensor::new(&[1, c], mask)?)?;
    let picked = tape.mul(pooled, mask)?;
    let obj = tape.sum(picked)?;
    let value = tape.value(obj).data()[0];
    tape.backward(obj)?;
    let grad = tape
        .grad(xv)
        .map(Tensor::into_data)
        .unwrap_or_else(|| vec![0.0; x.len()]);
    Ok((value, grad))
}

const MAX_HALVINGS: usize = 40;

/// Gradient ascent on the input waveform for one filter.
pub fn activation_maximization(
    probe: &dyn Probe,
    filter: usize,
    cfg: &VizConfig,
) -> Result<Maximization, VizError> {
    cfg.validate()?;
    if filter >= probe.n_filters() {
        return Err(VizError::Invalid(format!(
            "filter {filter} does not exist; the layer has {}",
            probe.n_filters()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(filter as u64);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| VizError::Invalid(e.to_string()))?;
    let mut x: Vec<f64> = (0..cfg.noise_len).map(|_| noise.sample(&mut rng)).collect();

    let penalty = |x: &[f64]| cfg.l2 * x.iter().map(|v| v * v).sum::<f64>();
    let (act, mut g_act) = activation_term(probe, filter, &x)?;
    let mut f = act - penalty(&x);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(f);
    let mut dead = false;

    for _ in 0..cfg.steps {
        if g_act.iter().all(|&g| g == 0.0) {
            dead = true;
            break;
        }
        let grad: Vec<f64> = g_act
            .iter()
            .zip(&x)
            .map(|(g, v)| g - 2.0 * cfg.l2 * v)
            .collect();
        let mut eta = cfg.step_size;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v + eta * g).collect();
            // A candidate that overflows the network is treated as a failed step.
            if let Ok((a, ga)) = activation_term(probe, filter, &cand) {
                let fc = a - penalty(&cand);
                if fc > f {
                    accepted = Some((cand, ga, fc));
                    break;
                }
            }
            eta *= 0.5;
        }
        match accepted {
            Some((cand, ga, fc)) => {
                x = cand;
                g_act = ga;
                f = fc;
                trace.push(f);
            }
            None => break,
        }
    }
    trace.resize(cfg.steps + 1, f);
    Ok(Maximization {
        filter,
        x,
        trace,
        dead,
    })
}
