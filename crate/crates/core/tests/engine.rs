mod common;

use common::{naive_conv1d, rng, uniform};
use proptest::prelude::*;
use rand::Rng;
use samplecnn::engine::{grad_check, sample_smooth_point, Tape, Tensor, TensorError, Var};

type Fn64 = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>;

/// Runs a gradient check on `instances` random points drawn by `sample`,
/// skipping points near kinks. Returns the worst error seen.
fn check_many(
    f: &Fn64,
    instances: usize,
    seed: u64,
    sample: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<Tensor<f64>>,
) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let point = sample_smooth_point(&f, || sample(&mut r), 1e-3, 200).expect("smooth point");
        let res = grad_check(f, &point, 1e-5).unwrap();
        worst = worst.max(res.max_relative_error);
    }
    worst
}

fn small(r: &mut rand_chacha::ChaCha8Rng, lo: usize) -> usize {
    r.random_range(lo..=7)
}

#[test]
fn relu_sigmoid_and_concat_definitions() {
    let mut t = Tape::<f32>::new();
    let x = t
        .constant(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap())
        .unwrap();
    let y = t.relu(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    let z = t.constant(Tensor::scalar(0.0)).unwrap();
    let s = t.sigmoid(z).unwrap();
    assert_eq!(t.value(s).data(), &[0.5]);
    let a = t.constant(Tensor::zeros(&[1, 2, 5])).unwrap();
    let b = t.constant(Tensor::ones(&[1, 3, 5])).unwrap();
    let c = t.concat_channels(&[a, b]).unwrap();
    assert_eq!(t.value(c).shape(), &[1, 5, 5]);
    assert_eq!(&t.value(c).data()[10..], &[1.0; 15]);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = t.constant(Tensor::zeros(&[3, 2])).unwrap();
    let err = t.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 2]"),
        "{msg}"
    );
}

#[test]
fn non_finite_values_are_errors() {
    let mut t = Tape::<f64>::new();
    assert!(matches!(
        t.constant(Tensor::new(&[1], vec![f64::NAN]).unwrap()),
        Err(TensorError::NonFinite { .. })
    ));
    let z = t.constant(Tensor::scalar(0.0)).unwrap();
    assert!(matches!(
        t.log(z),
        Err(TensorError::NonFinite { op: "log" })
    ));
    let big = t.constant(Tensor::scalar(1000.0)).unwrap();
    assert!(matches!(
        t.exp(big),
        Err(TensorError::NonFinite { op: "exp" })
    ));
}

#[test]
fn backward_of_sum_is_all_ones() {
    let mut t = Tape::<f64>::new();
    let x = t
        .param(Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap())
        .unwrap();
    let s = t.sum(x).unwrap();
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[1.0; 6]);
}

#[test]
fn backward_accumulates_until_zeroed() {
    let mut t = Tape::<f64>::new();
    let x = t
        .param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap())
        .unwrap();
    let s = t.sum(x).unwrap();
    t.backward(s).unwrap();
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[2.0, 2.0]);
    t.zero_grad();
    assert!(t.grad(x).is_none());
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn backward_rejects_detached_and_non_scalar_roots() {
    let mut t = Tape::<f64>::new();
    let c = t.constant(Tensor::scalar(3.0)).unwrap();
    assert_eq!(t.backward(c), Err(TensorError::DetachedRoot));
    let x = t.param(Tensor::zeros(&[2])).unwrap();
    let y = t.relu(x).unwrap();
    assert!(matches!(
        t.backward(y),
        Err(TensorError::NonScalarRoot { .. })
    ));
}

#[test]
fn conv1d_small_examples() {
    let mut t = Tape::<f64>::new();
    let x = t
        .constant(Tensor::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap())
        .unwrap();
    let w = t
        .constant(Tensor::from_f64(&[1, 1, 3], &[1.0, 0.0, -1.0]).unwrap())
        .unwrap();
    let b = t.constant(Tensor::from_f64(&[1], &[0.0]).unwrap()).unwrap();
    let y = t.conv1d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(t.value(y).data(), &[-2.0]);

    let id = t
        .constant(Tensor::from_f64(&[1, 1, 1], &[1.0]).unwrap())
        .unwrap();
    let y = t.conv1d(x, id, Some(b), 1, 0).unwrap();
    assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0]);

    let z = t.constant(Tensor::zeros(&[2, 6])).unwrap();
    let w = t.constant(Tensor::ones(&[3, 2, 3])).unwrap();
    let b = t
        .constant(Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap())
        .unwrap();
    let y = t.conv1d(z, w, Some(b), 1, 1).unwrap();
    assert_eq!(t.value(y).shape(), &[3, 6]);
    for (row, &bias) in t.value(y).data().chunks(6).zip(&[0.5, -1.0, 2.0]) {
        assert!(row.iter().all(|&v| v == bias));
    }
}

#[test]
fn conv1d_channel_mismatch_is_error() {
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::zeros(&[1, 2, 8])).unwrap();
    let w = t.constant(Tensor::zeros(&[4, 3, 3])).unwrap();
    assert!(matches!(
        t.conv1d(x, w, None, 1, 1),
        Err(TensorError::ShapeMismatch { op: "conv1d", .. })
    ));
}

#[test]
fn conv1d_matches_naive_triple_loop() {
    let mut r = rng(11);
    for _ in 0..50 {
        let (n, ci, co) = (
            r.random_range(1..=3),
            r.random_range(1..=4),
            r.random_range(1..=4),
        );
        let k: usize = r.random_range(1..=4);
        let stride = r.random_range(1..=3);
        let (pl, pr): (usize, usize) = (r.random_range(0..=2), r.random_range(0..=2));
        let t_len = r.random_range(k.saturating_sub(pl + pr).max(1)..=12);
        let x = uniform(&mut r, &[n, ci, t_len], -1.0, 1.0);
        let w = uniform(&mut r, &[co, ci, k], -1.0, 1.0);
        let b = uniform(&mut r, &[co], -1.0, 1.0);
        let (expected, out_len) = naive_conv1d(
            x.data(),
            (n, ci, t_len),
            w.data(),
            (co, k),
            Some(b.data()),
            stride,
            pl,
            pr,
        );
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.constant(x).unwrap(),
            tape.constant(w).unwrap(),
            tape.constant(b).unwrap(),
        );
        let y = tape
            .conv1d_padded(xv, wv, Some(bv), stride, pl, pr)
            .unwrap();
        assert_eq!(tape.value(y).shape(), &[n, co, out_len]);
        let err = tape
            .value(y)
            .data()
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max abs err {err}");
    }
}

#[test]
fn conv1d_weight_gradient_matches_finite_differences() {
    let f = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.conv1d(v[0], v[1], None, 1, 1)?;
        t.sum(y)
    };
    let worst = check_many(&f, 20, 1, |r| {
        vec![
            uniform(r, &[2, 3, 7], -1.0, 1.0),
            uniform(r, &[4, 3, 3], -1.0, 1.0),
        ]
    });
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn gradients_of_every_op_match_finite_differences() {
    let mut report = Vec::new();
    macro_rules! check {
        ($name:expr, $f:expr, $sample:expr) => {{
            let f = $f;
            let worst = check_many(&f, 20, report.len() as u64 + 100, $sample);
            report.push(($name, worst));
        }};
    }
    let weights = |r: &mut rand_chacha::ChaCha8Rng, shape: &[usize]| uniform(r, shape, -1.0, 1.0);

    check!(
        "add/sub/mul",
        |t: &mut Tape<f64>, v: &[Var]| {
            let a = t.add(v[0], v[1])?;
            let m = t.mul(a, v[1])?;
            let s = t.sub(m, v[0])?;
            let w = t.mul(s, v[2])?;
            t.sum(w)
        },
        |r| {
            let s = [small(r, 1), small(r, 1)];
            vec![weights(r, &s), weights(r, &s), weights(r, &s)]
        }
    );
    check!(
        "scale/relu",
        |t: &mut Tape<f64>, v: &[Var]| {
            let s = t.scale(v[0], -1.7)?;
            let y = t.relu(s)?;
            let w = t.mul(y, v[1])?;
            t.sum(w)
        },
        |r| {
            let s = [small(r, 1), small(r, 1)];
            vec![weights(r, &s), weights(r, &s)]
        }
    );
    check!(
        "sigmoid/exp/log",
        |t: &mut Tape<f64>, v: &[Var]| {
            let s = t.sigmoid(v[0])?;
            let e = t.exp(s)?;
            let l = t.log(e)?;
            let w = t.mul(l, v[1])?;
            t.mean(w)
        },
        |r| {
            let s = [small(r, 1)];
            vec![uniform(r, &s, -3.0, 3.0), weights(r, &s)]
        }
    );
    check!(
        "mean_time/max_time",
        |t: &mut Tape<f64>, v: &[Var]| {
            let m = t.mean_time(v[0])?;
            let x = t.max_time(v[0])?;
            let p = t.mul(m, x)?;
            t.sum(p)
        },
        |r| {
            let s = [small(r, 1), small(r, 1), small(r, 1)];
            vec![weights(r, &s)]
        }
    );
    check!(
        "linear",
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        },
        |r| {
            let (n, f, o) = (small(r, 1), small(r, 1), small(r, 1));
            vec![weights(r, &[n, f]), weights(r, &[o, f]), weights(r, &[o])]
        }
    );
    check!(
        "conv1d",
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.conv1d_padded(v[0], v[1], Some(v[2]), 2, 1, 0)?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        },
        |r| {
            let (n, ci, co, k) = (small(r, 1), small(r, 1), small(r, 1), r.random_range(1..=3));
            let tl = r.random_range(k..=7);
            vec![
                weights(r, &[n, ci, tl]),
                weights(r, &[co, ci, k]),
                weights(r, &[co]),
            ]
        }
    );
    check!(
        "maxpool1d",
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.maxpool1d(v[0], 2)?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        },
        |r| {
            let s = [small(r, 1), small(r, 1), small(r, 2)];
            vec![weights(r, &s)]
        }
    );
    check!(
        "concat/scale_channels",
        |t: &mut Tape<f64>, v: &[Var]| {
            let c = t.concat_channels(&[v[0], v[1]])?;
            let s = t.sigmoid(v[2])?;
            let y = t.scale_channels(c, s)?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        },
        |r| {
            let (n, c1, c2, tl) = (small(r, 1), small(r, 1), small(r, 1), small(r, 1));
            vec![
                weights(r, &[n, c1, tl]),
                weights(r, &[n, c2, tl]),
                weights(r, &[n, c1 + c2]),
            ]
        }
    );
    check!(
        "batchnorm_train",
        |t: &mut Tape<f64>, v: &[Var]| {
            let (y, _) = t.batchnorm_train(v[0], v[1], v[2], 1e-5)?;
            let w = t.mul(y, v[3])?;
            t.sum(w)
        },
        |r| {
            let (n, c, tl) = (small(r, 2), small(r, 1), small(r, 2));
            vec![
                weights(r, &[n, c, tl]),
                weights(r, &[c]),
                weights(r, &[c]),
                weights(r, &[n, c, tl]),
            ]
        }
    );
    check!(
        "batchnorm_infer",
        |t: &mut Tape<f64>, v: &[Var]| {
            let c = t.value(v[1]).len();
            let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
            let var: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
            let y = t.batchnorm_infer(v[0], v[1], v[2], &mean, &var, 1e-5)?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        },
        |r| {
            let (n, c, tl) = (small(r, 1), small(r, 1), small(r, 1));
            vec![weights(r, &[n, c, tl]), weights(r, &[c]), weights(r, &[c])]
        }
    );
    check!(
        "slice/pad",
        |t: &mut Tape<f64>, v: &[Var]| {
            let s = t.slice_time(v[0], 1, 2)?;
            let p = t.pad_time(s, 2, 1)?;
            let w = t.mul(p, v[1])?;
            t.sum(w)
        },
        |r| {
            let (n, c, tl) = (small(r, 1), small(r, 1), small(r, 3));
            vec![weights(r, &[n, c, tl]), weights(r, &[n, c, 5])]
        }
    );
    check!(
        "softmax",
        |t: &mut Tape<f64>, v: &[Var]| {
            let p = t.softmax(v[0])?;
            let w = t.mul(p, v[1])?;
            t.sum(w)
        },
        |r| {
            let s = [small(r, 1), small(r, 2)];
            vec![uniform(r, &s, -3.0, 3.0), weights(r, &s)]
        }
    );

    for (name, worst) in &report {
        println!("{name:>24}: max relative error {worst:.3e}");
    }
    for (name, worst) in report {
        assert!(worst < 1e-4, "{name}: {worst}");
    }
}

#[test]
fn kink_margin_ignores_clamped_ties() {
    let mut t = Tape::<f64>::new();
    let x = t
        .param(Tensor::new(&[1, 1, 6], vec![-0.5, -0.2, -0.9, 0.3, 0.25, -1.0]).unwrap())
        .unwrap();
    let r = t.relu(x).unwrap();
    t.maxpool1d(r, 3).unwrap();
    assert!((t.kink_margin() - 0.05).abs() < 1e-12);

    let mut t = Tape::<f64>::new();
    let x = t
        .param(Tensor::new(&[1, 1, 3], vec![0.4, 0.4, -1.0]).unwrap())
        .unwrap();
    t.maxpool1d(x, 3).unwrap();
    assert_eq!(t.kink_margin(), 0.0);
}

#[test]
fn tape_replay_is_bitwise_deterministic() {
    let run = || {
        let mut r = rng(5);
        let mut t = Tape::<f32>::new();
        let x = t
            .constant(uniform(&mut r, &[2, 3, 9], -1.0, 1.0).cast())
            .unwrap();
        let w = t
            .param(uniform(&mut r, &[4, 3, 3], -1.0, 1.0).cast())
            .unwrap();
        let y = t.conv1d(x, w, None, 1, 1).unwrap();
        let p = t.maxpool1d(y, 3).unwrap();
        let s = t.mean(p).unwrap();
        t.backward(s).unwrap();
        (t.value(s).clone(), t.grad(w).unwrap())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
    assert!(ga
        .data()
        .iter()
        .zip(gb.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #[test]
    fn conv1d_output_extent_rule(t_len in 1usize..40, k in 1usize..6, stride in 1usize..5, pad in 0usize..3) {
        prop_assume!(t_len + 2 * pad >= k);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, t_len])).unwrap();
        let w = tape.constant(Tensor::zeros(&[1, 1, k])).unwrap();
        let y = tape.conv1d(x, w, None, stride, pad).unwrap();
        prop_assert_eq!(tape.value(y).shape()[2], (t_len + 2 * pad - k) / stride + 1);
    }

    #[test]
    fn maxpool_routes_each_gradient_to_one_position(
        data in proptest::collection::vec(-3i32..3, 12),
        upstream in proptest::collection::vec(-2.0f64..2.0, 4),
    ) {
        // Small integer inputs force plenty of ties.
        let x: Vec<f64> = data.iter().map(|&v| v as f64).collect();
        let mut t = Tape::<f64>::new();
        let xv = t.param(Tensor::new(&[1, 1, 12], x.clone()).unwrap()).unwrap();
        let p = t.maxpool1d(xv, 3).unwrap();
        let u = t.constant(Tensor::new(&[1, 1, 4], upstream.clone()).unwrap()).unwrap();
        let w = t.mul(p, u).unwrap();
        let s = t.sum(w).unwrap();
        t.backward(s).unwrap();
        let g = t.grad(xv).unwrap();
        for (win, &d) in upstream.iter().enumerate() {
            let slots = &g.data()[win * 3..win * 3 + 3];
            let first_max = (0..3).fold(0, |b, i| if x[win * 3 + i] > x[win * 3 + b] { i } else { b });
            for (i, &gv) in slots.iter().enumerate() {
                prop_assert_eq!(gv, if i == first_max { d } else { 0.0 });
            }
        }
        let total: f64 = g.data().iter().sum();
        prop_assert!((total - upstream.iter().sum::<f64>()).abs() < 1e-12);
    }
}
