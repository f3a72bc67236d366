//! The `samplecnn` command line.
//!
//! Data goes to stdout as `key=value` lines, diagnostics to stderr. Exit
//! status is 0 on success, 2 on a usage error and 1 on any other failure.

mod config;

pub use config::{DataConfig, RunConfig, CONFIG_VERSION};

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::audio::{load_clip, load_manifest, AudioError, Dataset, Manifest, Split};
use crate::nn::{extent_trace, receptive_field, Model};
use crate::train::{
    evaluate, predict_clip, task_of, train, write_metric_log, Checkpoint, EvalOptions, MetricRow,
    Precision, TrainData, TrainError,
};
use crate::viz::{emit_sheet, require_all_three, visualize_layer, VizError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Viz(#[from] VizError),
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "samplecnn",
    version,
    about = "Sample-level raw-waveform audio classifiers"
)]
struct Cli {
    /// Worker threads for decoding, evaluation and visualization (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Score one WAV file.
    Predict(PredictArgs),
    /// Write filter spectrum sheets for one layer.
    Visualize(VisualizeArgs),
    /// Print temporal extents and receptive fields of a config.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = Split::Test)]
    split: Split,
    /// Adds instance F1 at this decision threshold (multi-label only).
    #[arg(long)]
    threshold: Option<f64>,
    /// Defaults to the value stored in the checkpoint.
    #[arg(long)]
    segments: Option<usize>,
    /// Metric CSV path; defaults to `eval_<split>.csv` beside the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    wav: PathBuf,
    /// Print only the `k` highest-scoring classes.
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    segments: Option<usize>,
}

#[derive(Debug, Args)]
struct VisualizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// 1 is the stem output, `n + 1` the output of block `n`.
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    out: PathBuf,
    /// Run config whose `viz` section supplies the ascent settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    config: PathBuf,
}

/// Runs the command line with the process's stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock())
}

/// Runs the command line, writing data lines to `out`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let line = e.to_string().replace('\n', "; ");
            eprintln!("error: {line}");
            1
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let w = cli.workers;
    match cli.command {
        Command::Train(a) => cmd_train(a, w, out),
        Command::Eval(a) => cmd_eval(a, w, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Visualize(a) => cmd_visualize(a, w, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    }
}

macro_rules! emit {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| CliError::io(Path::new("<stdout>"), e))
    };
}

fn cmd_train(a: TrainArgs, workers: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let dir = a.out.or(cfg.output_dir.clone()).ok_or_else(|| {
        CliError::Config("no output directory: pass --out or set output_dir".into())
    })?;
    if !cfg.data.manifest.is_file() {
        return Err(CliError::Config(format!(
            "manifest {} does not exist",
            cfg.data.manifest.display()
        )));
    }
    let manifest = load_manifest(&cfg.data.manifest)?;
    let rate = cfg.model.sample_rate;
    let train_set = Dataset::load(&manifest, Split::Train, rate, cfg.data.task, workers)?;
    let valid_set = Dataset::load(&manifest, Split::Valid, rate, cfg.data.task, workers)?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let data = TrainData {
        train: &train_set,
        valid: &valid_set,
        labels: manifest.vocabulary.clone(),
        eval: EvalOptions {
            segments_per_clip: cfg.data.segments_per_clip,
            threshold: cfg.data.threshold,
            workers,
        },
    };
    let best_path = dir.join("best.ckpt");
    let on_epoch = |ev: &crate::train::EpochEvent<'_>| {
        for r in ev.rows {
            log::info!("epoch {} {}/{} = {}", r.epoch, r.split, r.metric, r.value);
        }
        match ev.improved {
            Some(ckpt) => ckpt.save(&best_path),
            None => Ok(()),
        }
    };
    let outcome = match cfg.train.precision {
        Precision::F32 => train::<f32>(&cfg.model, &cfg.train, &data, on_epoch)?,
        Precision::F64 => train::<f64>(&cfg.model, &cfg.train, &data, on_epoch)?,
    };
    outcome.best.save(&best_path)?;
    outcome.last.save(&dir.join("last.ckpt"))?;
    write_csv(&dir.join("metrics.csv"), &outcome.log)?;

    let meta = &outcome.best.meta;
    emit!(out, "best_epoch={}", meta.epoch)?;
    if let Some(v) = meta.best_metric {
        emit!(out, "valid_{}={}", meta.metric, v)?;
    }
    emit!(out, "valid_loss={}", outcome.best_valid_loss)?;
    emit!(out, "checkpoint={}", best_path.display())?;
    Ok(())
}

fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_metric_log(std::io::BufWriter::new(file), rows, true)?;
    Ok(())
}

/// Re-indexes a manifest's labels against the label list of a checkpoint.
fn align_labels(mut manifest: Manifest, labels: &[String]) -> Result<Manifest, CliError> {
    for rec in &mut manifest.records {
        for l in &mut rec.labels {
            let name = &manifest.vocabulary[*l];
            *l = labels.iter().position(|k| k == name).ok_or_else(|| {
                CliError::Config(format!(
                    "{}: label {name:?} is unknown to the checkpoint",
                    rec.path.display()
                ))
            })?;
        }
        rec.labels.sort_unstable();
    }
    manifest.vocabulary = labels.to_vec();
    Ok(manifest)
}

fn cmd_eval(a: EvalArgs, workers: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let task = task_of(ckpt.model.head.output);
    let manifest = align_labels(load_manifest(&a.manifest)?, &ckpt.meta.labels)?;
    let data = Dataset::load(&manifest, a.split, ckpt.model.sample_rate, task, workers)?;
    let model =
        Model::from_parts(ckpt.model.clone(), ckpt.params.clone()).map_err(TrainError::from)?;
    let opts = EvalOptions {
        segments_per_clip: a.segments.unwrap_or(ckpt.meta.segments_per_clip),
        threshold: a.threshold,
        workers,
    };
    let report = evaluate(&model, &data, &opts)?;
    let rows: Vec<MetricRow> = report
        .metrics
        .iter()
        .map(|(name, value)| MetricRow {
            epoch: ckpt.meta.epoch,
            split: a.split.to_string(),
            metric: name.clone(),
            value: *value,
        })
        .collect();
    for r in &rows {
        emit!(out, "{}={}", r.metric, r.value)?;
    }
    let csv_path = a.out.unwrap_or_else(|| {
        a.checkpoint
            .parent()
            .unwrap_or(Path::new(""))
            .join(format!("eval_{}.csv", a.split))
    });
    write_csv(&csv_path, &rows)
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model =
        Model::from_parts(ckpt.model.clone(), ckpt.params.clone()).map_err(TrainError::from)?;
    let wave = load_clip(&a.wav, ckpt.model.sample_rate)?;
    let n = a.segments.unwrap_or(ckpt.meta.segments_per_clip);
    let scores: Vec<f32> = predict_clip(&model, &wave.samples, n)?;
    let mut ranked: Vec<usize> = (0..scores.len()).collect();
    ranked.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    ranked.truncate(a.topk.unwrap_or(scores.len()));
    for i in ranked {
        let name = ckpt
            .meta
            .labels
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("class_{i}"));
        emit!(out, "{name}={}", scores[i])?;
    }
    Ok(())
}

fn cmd_visualize(a: VisualizeArgs, workers: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    require_all_three(&ckpt.model)?;
    let model =
        Model::from_parts(ckpt.model.clone(), ckpt.params.clone()).map_err(TrainError::from)?;
    let mut viz = match &a.config {
        Some(path) => RunConfig::load(path)?.viz,
        None => crate::viz::VizConfig::default(),
    };
    viz.layer = a.layer;
    if let Some(seed) = a.seed {
        viz.seed = seed;
    }
    if let Some(steps) = a.steps {
        viz.steps = steps;
    }
    let (sheet, results) = visualize_layer(&model, &viz, workers)?;
    let (csv, pgm) = emit_sheet(&sheet, &a.out)?;
    emit!(out, "filters={}", results.len())?;
    emit!(
        out,
        "dead_filters={}",
        results.iter().filter(|m| m.dead).count()
    )?;
    emit!(out, "csv={}", csv.display())?;
    emit!(out, "pgm={}", pgm.display())?;
    Ok(())
}

fn cmd_inspect(a: InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let m = &cfg.model;
    let trace = extent_trace(m, m.input_len).map_err(TrainError::from)?;
    emit!(out, "input_len={}", m.input_len)?;
    for (depth, extent) in trace.iter().enumerate() {
        let rf = receptive_field(m, depth).map_err(TrainError::from)?;
        let stage = if depth == 0 {
            "stem".to_string()
        } else {
            format!("block{depth}")
        };
        let channels = if depth == 0 {
            m.stem.filters
        } else {
            m.blocks[depth - 1].filters
        };
        emit!(
            out,
            "stage={stage} channels={channels} extent={extent} receptive_field={} jump={} global_gating={}",
            rf.span,
            rf.jump,
            rf.global_gating
        )?;
    }
    emit!(
        out,
        "final_extent={}",
        trace.last().expect("trace has the stem entry")
    )?;
    emit!(out, "total_downsampling={}", m.total_downsampling())?;
    emit!(out, "visualizable={}", require_all_three(m).is_ok())?;
    Ok(())
}
