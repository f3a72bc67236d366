use std::path::{Path, PathBuf};
use std::process::Command;

use samplecnn::audio::{encode_wav, SampleFormat, Split};
use samplecnn::cli::{run_with, DataConfig, RunConfig};
use samplecnn::engine::Tensor;
use samplecnn::nn::*;
use samplecnn::synth::{write_dataset, ToneBands};
use samplecnn::train::Checkpoint;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run_with(
        std::iter::once("samplecnn").chain(args.iter().copied()),
        &mut out,
    );
    (code, String::from_utf8(out).unwrap())
}

fn value<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
}

#[test]
fn inspect_reports_dcase_geometry() {
    let cfg = configs_dir().join("dcase.json");
    let (code, out) = run(&["inspect", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(value(&out, "final_extent"), "1");
    assert_eq!(value(&out, "total_downsampling"), "19683");
    assert_eq!(value(&out, "input_len"), "19683");
    assert_eq!(out.lines().filter(|l| l.starts_with("stage=")).count(), 9);
}

#[test]
fn shipped_configs_match_presets() {
    for (name, preset) in [
        ("mtat", ModelConfig::mtat(Architecture::Rese2Multi)),
        ("speech", ModelConfig::speech(Architecture::Rese2Multi)),
        ("dcase", ModelConfig::dcase(Architecture::Rese2Multi)),
    ] {
        let cfg = RunConfig::load(&configs_dir().join(format!("{name}.json"))).unwrap();
        assert_eq!(cfg.model, preset, "{name}");
        let (code, out) = run(&[
            "inspect",
            "--config",
            configs_dir().join(format!("{name}.json")).to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert_eq!(value(&out, "final_extent"), "1", "{name}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let bin = env!("CARGO_BIN_EXE_samplecnn");
    let o = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = Command::new(bin)
        .args(["eval", "--manifest", "m.jsonl"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_one_with_one_line() {
    let bin = env!("CARGO_BIN_EXE_samplecnn");
    let o = Command::new(bin)
        .args([
            "predict",
            "--checkpoint",
            "/nonexistent/x.ckpt",
            "--wav",
            "a.wav",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
}

#[test]
fn config_rejects_unknown_keys_and_task_mismatch() {
    let text = std::fs::read_to_string(configs_dir().join("speech.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    RunConfig::from_json(&v.to_string()).unwrap();
    v["train"]["learning_rate"] = 0.1.into();
    assert!(RunConfig::from_json(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["data"]["task"] = "multilabel".into();
    assert!(RunConfig::from_json(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["version"] = 2.into();
    assert!(RunConfig::from_json(&v.to_string()).is_err());
}

fn small_model() -> ModelConfig {
    let mut m = ModelConfig::preset(
        Architecture::Rese2Multi,
        729,
        3,
        5,
        3,
        OutputKind::SoftmaxMulticlass,
    );
    m.stem.filters = 4;
    for b in &mut m.blocks {
        b.filters = 4;
        b.se_reduction = Some(2);
    }
    m.head.hidden = 8;
    m
}

fn write_config(dir: &Path, manifest: &Path) -> PathBuf {
    let cfg = RunConfig {
        version: 1,
        model: small_model(),
        train: serde_json::from_value(serde_json::json!({
            "batch_size": 4,
            "epochs": 3,
            "optimizer": { "kind": "adam", "lr": 0.001 },
            "seed": 3
        }))
        .unwrap(),
        data: DataConfig {
            manifest: manifest.to_path_buf(),
            task: samplecnn::audio::Task::Multiclass,
            segments_per_clip: 1,
            threshold: None,
        },
        viz: Default::default(),
        output_dir: None,
    };
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn train_eval_predict_visualize_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let bands = ToneBands::default();
    let clips: Vec<_> = bands
        .multiclass(18, 4)
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, if i < 12 { Split::Train } else { Split::Valid }))
        .collect();
    let names: Vec<String> = ["high", "low", "mid"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let manifest = write_dataset(&tmp.path().join("data"), &clips, &names, 16_000).unwrap();
    let config = write_config(tmp.path(), &manifest);
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let out_a = tmp.path().join("a");
    let (code, train_out) = run(&["train", "--config", &s(&config), "--out", &s(&out_a)]);
    assert_eq!(code, 0);
    let ckpt = out_a.join("best.ckpt");
    assert_eq!(value(&train_out, "checkpoint"), s(&ckpt));

    // Same inputs, same bytes.
    let out_b = tmp.path().join("b");
    assert_eq!(
        run(&["train", "--config", &s(&config), "--out", &s(&out_b)]).0,
        0
    );
    for f in ["best.ckpt", "last.ckpt", "metrics.csv"] {
        assert_eq!(
            std::fs::read(out_a.join(f)).unwrap(),
            std::fs::read(out_b.join(f)).unwrap(),
            "{f}"
        );
    }

    // Evaluating the kept checkpoint reproduces the logged validation metric.
    let (code, eval_out) = run(&[
        "eval",
        "--checkpoint",
        &s(&ckpt),
        "--manifest",
        &s(&manifest),
        "--split",
        "valid",
    ]);
    assert_eq!(code, 0);
    let best_epoch = value(&train_out, "best_epoch");
    let logged = std::fs::read_to_string(out_a.join("metrics.csv")).unwrap();
    let row = format!(
        "{best_epoch},valid,accuracy,{}",
        value(&eval_out, "accuracy")
    );
    assert!(logged.lines().any(|l| l == row), "{row} not in\n{logged}");
    assert_eq!(
        value(&train_out, "valid_accuracy"),
        value(&eval_out, "accuracy")
    );
    assert!(out_a.join("eval_valid.csv").is_file());

    // A clip exactly one segment long scores like a plain forward pass.
    let wav = tmp.path().join("one.wav");
    let samples = &clips[0].0.samples;
    std::fs::write(&wav, encode_wav(samples, 1, 16_000, SampleFormat::Float32)).unwrap();
    let (code, pred_out) = run(&["predict", "--checkpoint", &s(&ckpt), "--wav", &s(&wav)]);
    assert_eq!(code, 0);
    let c = Checkpoint::load(&ckpt).unwrap();
    let model = Model::from_parts(c.model.clone(), c.params.clone()).unwrap();
    let direct = model
        .predict(&Tensor::new(&[1, 1, 729], samples.clone()).unwrap())
        .unwrap();
    for (i, name) in names.iter().enumerate() {
        let printed: f32 = value(&pred_out, name).parse().unwrap();
        assert_eq!(printed, direct.data()[i], "{name}");
    }
    let (_, top) = run(&[
        "predict",
        "--checkpoint",
        &s(&ckpt),
        "--wav",
        &s(&wav),
        "--topk",
        "1",
    ]);
    assert_eq!(top.lines().count(), 1);

    let viz_dir = tmp.path().join("viz");
    let (code, viz_out) = run(&[
        "visualize",
        "--checkpoint",
        &s(&ckpt),
        "--layer",
        "2",
        "--out",
        &s(&viz_dir),
        "--steps",
        "4",
    ]);
    assert_eq!(code, 0);
    assert_eq!(value(&viz_out, "filters"), "4");
    assert!(viz_dir.join("layer2.csv").is_file() && viz_dir.join("layer2.pgm").is_file());
}

#[test]
fn visualize_refuses_non_three_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = small_model();
    m.stem.kernel = 2;
    m.stem.stride = 2;
    m.input_len = 486;
    let model = Model::<f32>::new(m.clone(), 0).unwrap();
    let ckpt = Checkpoint {
        model: m,
        params: model.params().clone(),
        meta: samplecnn::train::CheckpointMeta {
            epoch: 0,
            metric: "accuracy".into(),
            best_metric: None,
            labels: vec!["a".into(), "b".into(), "c".into()],
            segments_per_clip: 1,
        },
    };
    let path = tmp.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let (code, _) = run(&[
        "visualize",
        "--checkpoint",
        path.to_str().unwrap(),
        "--layer",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}
