mod common;

use std::f64::consts::PI;
use std::path::Path;

use common::naive_dft_magnitude;
use proptest::prelude::*;
use samplecnn::audio::*;

fn wav_header(tag: u16, channels: u16, rate: u32, bits: u16, data_len: u32) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&tag.to_le_bytes());
    b.extend_from_slice(&channels.to_le_bytes());
    b.extend_from_slice(&rate.to_le_bytes());
    let align = channels * bits / 8;
    b.extend_from_slice(&(rate * align as u32).to_le_bytes());
    b.extend_from_slice(&align.to_le_bytes());
    b.extend_from_slice(&bits.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    b
}

#[test]
fn pcm16_value_scaling() {
    let mut b = wav_header(1, 1, 16_000, 16, 6);
    for v in [16384i16, -32768, 32767] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    let w = decode_wav(&b).unwrap();
    assert_eq!(w.sample_rate, 16_000);
    assert_eq!(w.samples, vec![0.5, -1.0, 32767.0 / 32768.0]);
}

#[test]
fn stereo_frames_average_to_mono() {
    let mut b = wav_header(3, 2, 8_000, 32, 8);
    b.extend_from_slice(&0.2f32.to_le_bytes());
    b.extend_from_slice(&0.4f32.to_le_bytes());
    let w = decode_wav(&b).unwrap();
    assert_eq!(w.samples.len(), 1);
    assert!((w.samples[0] - 0.3).abs() < 1e-7);
}

#[test]
fn truncated_body_is_reported() {
    let mut b = wav_header(1, 1, 16_000, 16, 2000);
    b.extend(std::iter::repeat_n(0u8, 1800));
    let err = decode_wav(&b).unwrap_err().to_string();
    assert!(err.contains("truncated data chunk"), "{err}");
}

#[test]
fn unsupported_encodings_name_the_format_tag() {
    let mut b = wav_header(0x0055, 1, 16_000, 16, 2);
    b.extend_from_slice(&[0, 0]);
    let err = decode_wav(&b).unwrap_err().to_string();
    assert!(err.contains("0x0055"), "{err}");

    let mut b = wav_header(1, 1, 16_000, 24, 3);
    b.extend_from_slice(&[0, 0, 0]);
    let err = decode_wav(&b).unwrap_err().to_string();
    assert!(err.contains("0x0001") && err.contains("24"), "{err}");

    let mut b = wav_header(1, 3, 16_000, 16, 6);
    b.extend_from_slice(&[0; 6]);
    assert!(decode_wav(&b).is_err());
    assert!(decode_wav(b"RIFX").is_err());
}

#[test]
fn extensible_header_resolves_sub_format() {
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(60u32 + 4).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&40u32.to_le_bytes());
    b.extend_from_slice(&0xFFFEu16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&16_000u32.to_le_bytes());
    b.extend_from_slice(&32_000u32.to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(&22u16.to_le_bytes()); // cbSize
    b.extend_from_slice(&16u16.to_le_bytes()); // valid bits
    b.extend_from_slice(&4u32.to_le_bytes()); // channel mask
    b.extend_from_slice(&1u16.to_le_bytes()); // PCM sub-format GUID head
    b.extend_from_slice(&[
        0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80, 0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71,
    ]);
    b.extend_from_slice(b"data");
    b.extend_from_slice(&4u32.to_le_bytes());
    b.extend_from_slice(&(-16384i16).to_le_bytes());
    b.extend_from_slice(&8192i16.to_le_bytes());
    assert_eq!(decode_wav(&b).unwrap().samples, vec![-0.5, 0.25]);
}

proptest! {
    #[test]
    fn pcm_round_trip_within_one_step(xs in prop::collection::vec(-1.0f32..1.0, 1..400)) {
        let w = decode_wav(&encode_wav(&xs, 1, 22_050, SampleFormat::Pcm16)).unwrap();
        prop_assert_eq!(w.samples.len(), xs.len());
        for (a, b) in w.samples.iter().zip(&xs) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn float_round_trip_is_exact(xs in prop::collection::vec(-1.0f32..1.0, 1..400)) {
        let w = decode_wav(&encode_wav(&xs, 1, 48_000, SampleFormat::Float32)).unwrap();
        prop_assert_eq!(w.samples, xs);
    }

    #[test]
    fn resampler_is_linear(
        xs in prop::collection::vec(-1.0f32..1.0, 1..300),
        a in -4.0f32..4.0,
        rates in prop::sample::select(vec![(44_100u32, 16_000u32), (8_000, 16_000), (22_050, 16_000), (16_000, 11_025)]),
    ) {
        let base = resample(&Waveform::new(xs.clone(), rates.0).unwrap(), rates.1).unwrap();
        let scaled = resample(&Waveform::new(xs.iter().map(|v| a * v).collect(), rates.0).unwrap(), rates.1).unwrap();
        for (s, b) in scaled.samples.iter().zip(&base.samples) {
            prop_assert!((s - a * b).abs() < 1e-6, "{} vs {}", s, a * b);
        }
    }

    #[test]
    fn segments_cover_first_and_last_sample(clip in 1usize..200_000, seg in 1usize..50_000, n in 2usize..16) {
        let plan = plan_segments(clip, seg, n).unwrap();
        prop_assert!(plan.offsets.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(plan.offsets.iter().all(|&o| o + seg <= plan.padded_len));
        if clip >= seg {
            prop_assert_eq!(plan.offsets[0], 0);
            prop_assert_eq!(*plan.offsets.last().unwrap() + seg, clip);
        }
    }
}

#[test]
fn same_rate_resampling_is_bitwise_identity() {
    let xs: Vec<f32> = (0..1000)
        .map(|i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0)
        .collect();
    let w = Waveform::new(xs, 16_000).unwrap();
    assert_eq!(resample(&w, 16_000).unwrap(), w);
}

#[test]
fn resampled_length_rounds() {
    let w = Waveform::new(vec![0.0; 22_050], 22_050).unwrap();
    assert_eq!(resample(&w, 16_000).unwrap().samples.len(), 16_000);
    let w = Waveform::new(vec![0.0; 3], 44_100).unwrap();
    // 3 · 16000 / 44100 = 1.088
    assert_eq!(resample(&w, 16_000).unwrap().samples.len(), 1);
    assert!(resample(&w, 0).is_err());
}

fn tone(freq: f64, rate: u32, len: usize) -> Waveform {
    let s = (0..len)
        .map(|n| (2.0 * PI * freq * n as f64 / rate as f64).sin() as f32)
        .collect();
    Waveform::new(s, rate).unwrap()
}

fn peak_and_band_energy(samples: &[f32], rate: u32, band_from_hz: f64) -> (f64, f64, f64) {
    let x: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    let mag = naive_dft_magnitude(&x);
    let hz = |k: usize| k as f64 * rate as f64 / x.len() as f64;
    let (argmax, peak) = mag
        .iter()
        .enumerate()
        .fold((0, 0.0), |b, (k, &m)| if m > b.1 { (k, m) } else { b });
    let band: f64 = mag
        .iter()
        .enumerate()
        .filter(|&(k, _)| hz(k) >= band_from_hz)
        .map(|(_, m)| m * m)
        .sum();
    (hz(argmax), peak * peak, band)
}

#[test]
fn downsampled_tone_keeps_its_frequency() {
    let out = resample(&tone(1000.0, 44_100, 4410), 16_000).unwrap();
    assert_eq!(out.samples.len(), 1600);
    let (f, peak, stop) = peak_and_band_energy(&out.samples, 16_000, 0.9 * 8000.0);
    assert_eq!(f, 1000.0);
    assert!(stop < 0.01 * peak, "stop-band energy {stop} vs peak {peak}");
}

#[test]
fn upsampled_tone_has_no_images() {
    let out = resample(&tone(1000.0, 16_000, 1600), 44_100).unwrap();
    assert_eq!(out.samples.len(), 4410);
    // Images of a 1 kHz tone land at 15, 17, 31, 33 kHz ... all above the
    // source Nyquist.
    let (f, peak, images) = peak_and_band_energy(&out.samples, 44_100, 8000.0);
    assert_eq!(f, 1000.0);
    assert!(images < 0.01 * peak, "image energy {images} vs peak {peak}");
}

#[test]
fn table_segment_spacing() {
    let plan = plan_segments(464_000, 39_366, 12).unwrap();
    assert_eq!(plan.n_segments(), 12);
    assert_eq!(plan.offsets[0], 0);
    assert_eq!(plan.offsets[11], 424_634);
    let gaps: Vec<usize> = plan.offsets.windows(2).map(|w| w[1] - w[0]).collect();
    // 424,634 / 11 = 38,603.09...
    assert!(gaps.iter().all(|&g| g == 38_603 || g == 38_604), "{gaps:?}");
    for (i, &o) in plan.offsets.iter().enumerate() {
        assert_eq!(o, 424_634 * i / 11);
    }
}

#[test]
fn degenerate_segment_plans() {
    assert_eq!(plan_segments(16_000, 16_000, 1).unwrap().offsets, vec![0]);
    let short = plan_segments(1000, 16_000, 5).unwrap();
    assert_eq!(short.offsets, vec![0]);
    assert_eq!(short.padded_len, 16_000);
    assert!(plan_segments(10, 0, 1).is_err());
    assert!(plan_segments(10, 5, 0).is_err());
    assert_eq!(extract(&[1.0, 2.0], 0, 4), vec![1.0, 2.0, 0.0, 0.0]);
    assert_eq!(extract(&[1.0, 2.0, 3.0], 1, 2), vec![2.0, 3.0]);
}

#[test]
fn manifest_vocabulary_is_sorted_union() {
    let text = r#"{"path": "x.wav", "labels": ["b"], "split": "train"}
{"path": "y.wav", "labels": ["a"], "split": "valid"}

{"path": "z.wav", "labels": ["b", "a", "b"], "split": "test"}
"#;
    let m = parse_manifest(text, Path::new("/data")).unwrap();
    assert_eq!(m.vocabulary, vec!["a", "b"]);
    assert_eq!(m.records[0].labels, vec![1]);
    assert_eq!(m.records[2].labels, vec![0, 1]);
    assert_eq!(m.records[1].path, Path::new("/data/y.wav"));
    assert_eq!(m.split(Split::Test).count(), 1);
}

#[test]
fn manifest_errors() {
    let dup = "{\"path\": \"a.wav\", \"labels\": [], \"split\": \"train\"}\n{\"path\": \"a.wav\", \"labels\": [], \"split\": \"test\"}\n";
    let err = parse_manifest(dup, Path::new("")).unwrap_err().to_string();
    assert!(err.contains("duplicate clip"), "{err}");

    assert_eq!(
        parse_manifest("", Path::new("")).unwrap_err().to_string(),
        "empty manifest"
    );
    assert_eq!(
        parse_manifest("\n  \n", Path::new(""))
            .unwrap_err()
            .to_string(),
        "empty manifest"
    );

    let bad_split = "{\"path\": \"a.wav\", \"labels\": [], \"split\": \"train\"}\n{\"path\": \"b.wav\", \"labels\": [], \"split\": \"dev\"}\n";
    let err = parse_manifest(bad_split, Path::new(""))
        .unwrap_err()
        .to_string();
    assert!(
        err.starts_with("manifest line 2:") && err.contains("dev"),
        "{err}"
    );

    let err = parse_manifest("{\"path\": \"a.wav\"\n", Path::new(""))
        .unwrap_err()
        .to_string();
    assert!(err.starts_with("manifest line 1:"), "{err}");

    let extra = "{\"path\": \"a.wav\", \"labels\": [], \"split\": \"train\", \"tags\": 1}";
    assert!(parse_manifest(extra, Path::new("")).is_err());
}

fn synthetic(n: usize, len: usize) -> Dataset {
    let clips = (0..n)
        .map(|i| Clip {
            samples: (0..len + i * 7)
                .map(|t| ((t + i) % 13) as f32 / 13.0)
                .collect(),
            labels: vec![i % 3],
        })
        .collect();
    Dataset::new(clips, 3, Task::Multiclass).unwrap()
}

#[test]
fn batch_order_is_deterministic() {
    let ds = synthetic(23, 100);
    let a: Vec<Batch> = ds.epoch(64, 5, 9, 0).collect();
    let b: Vec<Batch> = ds.epoch(64, 5, 9, 0).collect();
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    assert_eq!(a[4].x.shape(), &[3, 1, 64]);
    let mut seen: Vec<usize> = a.iter().flat_map(|b| b.clips.clone()).collect();
    seen.sort();
    assert_eq!(seen, (0..23).collect::<Vec<_>>());

    let c: Vec<Batch> = ds.epoch(64, 5, 9, 1).collect();
    assert_ne!(a, c);
    let d: Vec<Batch> = ds.epoch(64, 5, 10, 0).collect();
    assert_ne!(a, d);
}

#[test]
fn short_clips_are_zero_padded_in_batches() {
    let ds = Dataset::new(
        vec![Clip {
            samples: vec![0.5; 10],
            labels: vec![0, 2],
        }],
        3,
        Task::Multilabel,
    )
    .unwrap();
    let b = ds.epoch(16, 4, 0, 0).next().unwrap();
    assert_eq!(&b.x.data()[..10], &[0.5; 10]);
    assert_eq!(&b.x.data()[10..], &[0.0; 6]);
    match b.targets {
        Targets::Multilabel(t) => assert_eq!(t.data(), &[1.0, 0.0, 1.0]),
        Targets::Multiclass(_) => panic!("expected multilabel targets"),
    }
}

#[test]
fn dataset_validates_labels() {
    let clip = |labels: Vec<usize>| Clip {
        samples: vec![0.0; 4],
        labels,
    };
    assert!(Dataset::new(vec![clip(vec![3])], 3, Task::Multilabel).is_err());
    assert!(Dataset::new(vec![clip(vec![0, 1])], 3, Task::Multiclass).is_err());
    assert!(Dataset::new(vec![clip(vec![])], 3, Task::Multiclass).is_err());
    assert!(Dataset::new(vec![clip(vec![])], 3, Task::Multilabel).is_ok());
}

#[test]
fn dataset_loads_and_resamples_manifest_clips() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for (i, (rate, label, split)) in [
        (22_050u32, "hi", "train"),
        (16_000, "lo", "train"),
        (44_100, "hi", "valid"),
    ]
    .iter()
    .enumerate()
    {
        let name = format!("c{i}.wav");
        let samples: Vec<f32> = (0..*rate as usize / 10)
            .map(|t| (t as f32 * 0.01).sin() * 0.5)
            .collect();
        std::fs::write(
            dir.path().join(&name),
            encode_wav(&samples, 1, *rate, SampleFormat::Pcm16),
        )
        .unwrap();
        lines.push_str(&format!(
            "{{\"path\": \"{name}\", \"labels\": [\"{label}\"], \"split\": \"{split}\"}}\n"
        ));
    }
    let path = dir.path().join("m.jsonl");
    std::fs::write(&path, lines).unwrap();
    let m = load_manifest(&path).unwrap();
    let train = Dataset::load(&m, Split::Train, 16_000, Task::Multiclass, 2).unwrap();
    assert_eq!(train.len(), 2);
    assert_eq!(train.n_classes, 2);
    assert!(train.clips.iter().all(|c| c.samples.len() == 1600));
    assert_eq!(train.clips[0].labels, vec![0]);
    assert_eq!(train.clips[1].labels, vec![1]);

    std::fs::write(dir.path().join("c2.wav"), b"not a wav").unwrap();
    let err = Dataset::load(&m, Split::Valid, 16_000, Task::Multiclass, 1)
        .unwrap_err()
        .to_string();
    assert!(err.contains("c2.wav"), "{err}");
}
