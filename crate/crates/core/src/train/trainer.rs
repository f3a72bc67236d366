use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::metrics::{accuracy, auc_summary, bce_of_probs, instance_f1, nll_of_probs};
use super::optim::{Optimizer, OptimizerConfig};
use super::predict::predict_clip;
use super::TrainError;
use crate::audio::{with_workers, Dataset, Targets, Task};
use crate::engine::{Scalar, Tape, Tensor, TensorError};
use crate::nn::{Mode, Model, ModelConfig, OutputKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Multiply the learning rate by `factor` after `patience` epochs
    /// without a better validation metric.
    StepDecay {
        factor: f64,
        patience: usize,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::StepDecay {
            factor: 0.2,
            patience: 3,
        }
    }
}

/// Arithmetic used for the forward and backward passes. Checkpoints and
/// evaluation are always `f32`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Invalid(
                "train.batch_size must be at least 1".into(),
            ));
        }
        self.optimizer
            .validate()
            .map_err(|e| TrainError::Invalid(format!("train.optimizer: {e}")))?;
        if let Schedule::StepDecay { factor, patience } = self.schedule {
            if !(factor > 0.0 && factor <= 1.0) || patience == 0 {
                return Err(TrainError::Invalid(format!(
                    "train.schedule: need 0 < factor <= 1 and patience >= 1, got {factor} and {patience}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// Evaluation inputs shared by training and the `eval` command.
#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub segments_per_clip: usize,
    /// Enables instance F1 for multi-label tasks.
    pub threshold: Option<f64>,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Clip-level loss of the segment-averaged scores.
    pub loss: f64,
    /// `(name, value)` pairs in a fixed order, starting with `loss`.
    pub metrics: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }
}

pub fn task_of(output: OutputKind) -> Task {
    match output {
        OutputKind::SigmoidMultilabel => Task::Multilabel,
        OutputKind::SoftmaxMulticlass => Task::Multiclass,
    }
}

/// Metric that decides which epoch is kept.
pub fn selection_metric(task: Task) -> &'static str {
    match task {
        Task::Multilabel => "macro_auc",
        Task::Multiclass => "accuracy",
    }
}

/// Segment-averaged scores for every clip, `[N, C]`, in dataset order.
pub fn clip_scores(
    model: &Model<f32>,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<Tensor<f32>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Invalid(
            "cannot evaluate an empty dataset".into(),
        ));
    }
    let rows = with_workers(opts.workers, || {
        data.clips
            .par_iter()
            .map(|c| predict_clip(model, &c.samples, opts.segments_per_clip))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let c = rows[0].len();
    Ok(Tensor::new(&[rows.len(), c], rows.concat())?)
}

pub fn evaluate(
    model: &Model<f32>,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    let scores = clip_scores(model, data, opts)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut metrics = Vec::new();
    let loss = match data.targets(&all) {
        Targets::Multiclass(classes) => {
            let loss = nll_of_probs(&scores, &classes);
            metrics.push(("loss".to_string(), loss));
            metrics.push(("accuracy".to_string(), accuracy(&scores, &classes)));
            loss
        }
        Targets::Multilabel(truth) => {
            let loss = bce_of_probs(&scores, &truth);
            let auc = auc_summary(&scores, &truth);
            metrics.push(("loss".to_string(), loss));
            metrics.push(("macro_auc".to_string(), auc.macro_auc.unwrap_or(f64::NAN)));
            metrics.push(("micro_auc".to_string(), auc.micro_auc.unwrap_or(f64::NAN)));
            if let Some(t) = opts.threshold {
                metrics.push(("f1".to_string(), instance_f1(&scores, &truth, t)?));
            }
            loss
        }
    };
    Ok(EvalReport { loss, metrics })
}

pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub valid: &'a Dataset,
    pub labels: Vec<String>,
    pub eval: EvalOptions,
}

/// Reported after every epoch.
pub struct EpochEvent<'a> {
    pub epoch: usize,
    pub rows: &'a [MetricRow],
    /// Set when this epoch produced a new best checkpoint.
    pub improved: Option<&'a Checkpoint>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<MetricRow>,
    /// Lowest clip-level validation loss over all epochs.
    pub best_valid_loss: f64,
}

fn check_data(cfg: &ModelConfig, data: &TrainData<'_>) -> Result<Task, TrainError> {
    let task = task_of(cfg.head.output);
    for (name, ds) in [("train", data.train), ("valid", data.valid)] {
        if ds.is_empty() {
            return Err(TrainError::Invalid(format!("{name} split is empty")));
        }
        if ds.task != task {
            return Err(TrainError::Invalid(format!(
                "{name} split is {:?} but the model head is {:?}",
                ds.task, cfg.head.output
            )));
        }
        if ds.n_classes != cfg.head.n_classes {
            return Err(TrainError::Invalid(format!(
                "{name} split has {} classes but the model head has {}",
                ds.n_classes, cfg.head.n_classes
            )));
        }
    }
    if data.labels.len() != cfg.head.n_classes {
        return Err(TrainError::Invalid(format!(
            "{} label names for {} classes",
            data.labels.len(),
            cfg.head.n_classes
        )));
    }
    Ok(task)
}

/// Mini-batch training with per-epoch validation. The parameters of the
/// epoch with the best validation metric (ties broken by lower validation
/// loss) are kept.
pub fn train<S: Scalar>(
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    data: &TrainData<'_>,
    mut on_epoch: impl FnMut(&EpochEvent<'_>) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    tc.validate()?;
    let task = check_data(model_cfg, data)?;
    let metric = selection_metric(task);
    let mut model = Model::<S>::new(model_cfg.clone(), tc.seed)?;
    let mut opt = Optimizer::<S>::new(tc.optimizer.clone());
    let snapshot = |model: &Model<S>, epoch: usize, value: Option<f64>| Checkpoint {
        model: model_cfg.clone(),
        params: model.params().cast(),
        meta: CheckpointMeta {
            epoch,
            metric: metric.to_string(),
            best_metric: value,
            labels: data.labels.clone(),
            segments_per_clip: data.eval.segments_per_clip,
        },
    };

    let mut log = Vec::new();
    let mut best = snapshot(&model, 0, None);
    let mut best_score: Option<(f64, f64)> = None;
    let mut best_valid_loss = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=tc.epochs {
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let epoch_batches =
            data.train
                .epoch(model_cfg.input_len, tc.batch_size, tc.seed, epoch as u64);
        for (b, batch) in epoch_batches.enumerate() {
            let lr = opt.lr();
            let diverged = |detail: String| TrainError::Diverged {
                epoch,
                batch: b,
                lr,
                detail,
            };
            let loss = train_step(&mut model, &mut opt, &batch.x, &batch.targets)
                .map_err(|e| diverged(e.to_string()))?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss is {loss}")));
            }
            loss_sum += loss;
            batches += 1;
        }
        let start = log.len();
        let push = |log: &mut Vec<MetricRow>, split: &str, name: &str, value: f64| {
            log.push(MetricRow {
                epoch,
                split: split.into(),
                metric: name.into(),
                value,
            })
        };
        push(&mut log, "train", "loss", loss_sum / batches as f64);
        push(&mut log, "train", "lr", opt.lr());

        let frozen: Model<f32> = model.cast();
        let report = evaluate(&frozen, data.valid, &data.eval)?;
        for (name, value) in &report.metrics {
            push(&mut log, "valid", name, *value);
        }
        best_valid_loss = best_valid_loss.min(report.loss);
        let score = report.get(metric).unwrap_or(f64::NAN);
        let improved = match best_score {
            None => true,
            Some((m, l)) => score > m || (score == m && report.loss < l),
        };
        if improved {
            best_score = Some((score, report.loss));
            best = snapshot(&model, epoch, Some(score));
            stale = 0;
        } else {
            stale += 1;
            if let Schedule::StepDecay { factor, patience } = tc.schedule {
                if stale >= patience {
                    opt.set_lr(opt.lr() * factor);
                    stale = 0;
                    log::info!(
                        "epoch {epoch}: no improvement for {patience} epochs, lr -> {}",
                        opt.lr()
                    );
                }
            }
        }
        log::info!(
            "epoch {epoch}: train loss {:.5}, valid loss {:.5}, valid {metric} {score:.5}",
            loss_sum / batches as f64,
            report.loss
        );
        on_epoch(&EpochEvent {
            epoch,
            rows: &log[start..],
            improved: improved.then_some(&best),
        })?;
    }
    let last = snapshot(&model, tc.epochs, best_score.map(|s| s.0));
    Ok(TrainOutcome {
        best,
        last,
        log,
        best_valid_loss,
    })
}

/// One forward/backward/update on a batch; returns the batch loss.
fn train_step<S: Scalar>(
    model: &mut Model<S>,
    opt: &mut Optimizer<S>,
    x: &Tensor<f32>,
    targets: &Targets,
) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true)?;
    let xv = tape.constant(x.cast())?;
    let fwd = model.forward(&mut tape, &bound, xv, Mode::Train)?;
    let logits = fwd.logits.expect("full forward has logits");
    let loss = match targets {
        Targets::Multilabel(t) => tape.bce_with_logits(logits, &t.cast())?,
        Targets::Multiclass(c) => tape.cross_entropy(logits, c)?,
    };
    let value = tape.value(loss).item().expect("scalar loss").f64();
    tape.backward(loss)?;
    let grads: Vec<Tensor<S>> = model
        .params()
        .iter()
        .enumerate()
        .filter_map(|(i, _)| bound.var(i))
        .map(|v| tape.grad(v).expect("trainable leaves receive gradients"))
        .collect();
    opt.step(
        model
            .params_mut()
            .trainable_values_mut()
            .zip(&grads)
            .map(|((_, p), g)| (p.data_mut(), g.data())),
    );
    model.apply_bn_updates(&fwd.bn_updates);
    Ok(value)
}

/// Writes rows as CSV with header `epoch,split,metric,value`.
pub fn write_metric_log<W: std::io::Write>(
    out: W,
    rows: &[MetricRow],
    header: bool,
) -> Result<(), TrainError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    let csv_err = |e: csv::Error| TrainError::Invalid(format!("writing metric log: {e}"));
    if header {
        w.write_record(["epoch", "split", "metric", "value"])
            .map_err(csv_err)?;
    }
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.split.clone(),
            r.metric.clone(),
            r.value.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| TrainError::Invalid(format!("writing metric log: {e}")))
}
