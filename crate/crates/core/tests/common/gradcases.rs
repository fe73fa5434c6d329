//! Finite-difference checks of every layer's hand-written backward pass,
//! shared by the gradient tests and the acceptance binary.

use ndistill::network::exec::{backward, forward, LayerTape};
use ndistill::network::{init_params, residual_block, LayerParams, LayerSpec, SeqParams, Shortcut};
use ndistill::rng::{gaussian_sample, Rng};
use ndistill::tensor::{
    finite_diff_check, mse, mse_backward, softmax, softmax_cross_entropy, NormMode, Padding,
    RunningStats, Tensor,
};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Pre-activations closer than this to a ReLU kink are resampled.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct LayerResult {
    pub name: String,
    pub cases: usize,
    pub worst_rel: f64,
    pub passed: bool,
}

struct Case {
    name: &'static str,
    layers: Vec<LayerSpec>,
    input: Vec<usize>,
    mode: NormMode,
}

fn cases() -> Vec<Case> {
    let conv = |i, o, k, s, p| LayerSpec::Conv {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
    };
    vec![
        Case {
            name: "conv3x3_same_s1",
            layers: vec![conv(2, 3, 3, 1, Padding::Same)],
            input: vec![2, 2, 5, 5],
            mode: NormMode::Train,
        },
        Case {
            name: "conv3x3_same_s2",
            layers: vec![conv(2, 3, 3, 2, Padding::Same)],
            input: vec![2, 2, 6, 5],
            mode: NormMode::Train,
        },
        Case {
            name: "conv2x2_valid",
            layers: vec![conv(3, 2, 2, 1, Padding::Valid)],
            input: vec![1, 3, 4, 4],
            mode: NormMode::Train,
        },
        Case {
            name: "conv1x1_valid_s2",
            layers: vec![conv(3, 4, 1, 2, Padding::Valid)],
            input: vec![2, 3, 5, 5],
            mode: NormMode::Train,
        },
        Case {
            name: "dense",
            layers: vec![LayerSpec::Dense {
                in_features: 5,
                out_features: 3,
            }],
            input: vec![4, 5],
            mode: NormMode::Train,
        },
        Case {
            name: "relu",
            layers: vec![LayerSpec::Relu],
            input: vec![3, 2, 3, 3],
            mode: NormMode::Train,
        },
        Case {
            name: "norm_train_nchw",
            layers: vec![LayerSpec::Norm { channels: 3 }],
            input: vec![3, 3, 2, 2],
            mode: NormMode::Train,
        },
        Case {
            name: "norm_train_nc",
            layers: vec![LayerSpec::Norm { channels: 4 }],
            input: vec![5, 4],
            mode: NormMode::Train,
        },
        Case {
            name: "norm_eval",
            layers: vec![LayerSpec::Norm { channels: 3 }],
            input: vec![2, 3, 2, 2],
            mode: NormMode::Eval,
        },
        Case {
            name: "global_avg_pool",
            layers: vec![LayerSpec::GlobalAvgPool],
            input: vec![2, 3, 3, 4],
            mode: NormMode::Train,
        },
        Case {
            name: "flatten",
            layers: vec![LayerSpec::Flatten],
            input: vec![2, 2, 2, 3],
            mode: NormMode::Train,
        },
        Case {
            name: "pad_subsample_shortcut",
            layers: vec![
                LayerSpec::AddSkipBegin {
                    shortcut: Shortcut::PadSubsample {
                        in_channels: 2,
                        out_channels: 4,
                        stride: 2,
                    },
                },
                conv(2, 4, 3, 2, Padding::Same),
                LayerSpec::AddSkipEnd,
            ],
            input: vec![2, 2, 4, 4],
            mode: NormMode::Train,
        },
        Case {
            name: "projection_block",
            layers: residual_block(
                2,
                3,
                4,
                2,
                Shortcut::Projection {
                    in_channels: 2,
                    out_channels: 4,
                    stride: 2,
                },
            ),
            input: vec![2, 2, 4, 4],
            mode: NormMode::Train,
        },
        Case {
            name: "identity_block",
            layers: residual_block(3, 2, 3, 1, Shortcut::Identity),
            input: vec![2, 3, 3, 3],
            mode: NormMode::Train,
        },
    ]
}

fn randomize(params: &mut SeqParams<f64>, rng: &mut Rng, eval: bool) {
    for layer in &mut params.layers {
        if let LayerParams::Norm {
            gamma,
            beta,
            running,
        } = layer
        {
            let c = gamma.value.len();
            gamma.value = Tensor::from_fn(&[c], |_| rng.uniform_range(0.5, 1.5));
            beta.value = gaussian_sample(rng, &[c], 0.0, 0.5);
            if eval {
                *running = Some(RunningStats {
                    mean: gaussian_sample(rng, &[c], 0.0, 0.5),
                    var: Tensor::from_fn(&[c], |_| rng.uniform_range(0.5, 2.0)),
                });
            }
        }
    }
}

fn flatten(x: &Tensor<f64>, params: &SeqParams<f64>) -> Vec<f64> {
    let mut v = x.data().to_vec();
    for p in params.parameters() {
        v.extend_from_slice(p.value.data());
    }
    v
}

fn unflatten(theta: &[f64], x: &mut Tensor<f64>, params: &mut SeqParams<f64>) {
    let n = x.len();
    x.data_mut().copy_from_slice(&theta[..n]);
    let mut off = n;
    for p in params.parameters_mut() {
        let m = p.value.len();
        p.value.data_mut().copy_from_slice(&theta[off..off + m]);
        off += m;
    }
}

fn near_kink(layers: &[LayerSpec], tape_entries: &[LayerTape<f64>]) -> bool {
    layers.iter().zip(tape_entries).any(|(l, e)| match (l, e) {
        (LayerSpec::Relu, LayerTape::Input(x)) => x.data().iter().any(|v| v.abs() < KINK_MARGIN),
        _ => false,
    })
}

fn check_case(case: &Case, rng: &mut Rng) -> f64 {
    let mut params: SeqParams<f64> = init_params(&case.layers, &mut rng.split("init", 0)).cast();
    randomize(&mut params, rng, case.mode == NormMode::Eval);
    let (x, tape, y) = loop {
        let x: Tensor<f64> = gaussian_sample(rng, &case.input, 0.0, 1.0);
        let (y, tape) = forward(&case.layers, &params, &x, case.mode, true).expect("forward");
        let tape = tape.expect("recorded");
        if !near_kink(&case.layers, &tape.entries) {
            break (x, tape, y);
        }
    };
    let r: Tensor<f64> = gaussian_sample(rng, y.shape(), 0.0, 1.0);
    let (gx, pg) = backward(&case.layers, &params, &tape, &r, true).expect("backward");
    let mut analytic = gx.data().to_vec();
    for g in pg.expect("param grads").iter().flatten() {
        analytic.extend_from_slice(g.data());
    }
    let theta = flatten(&x, &params);
    let (mut xs, mut ps) = (x.clone(), params.clone());
    let report = finite_diff_check(
        |t| {
            unflatten(t, &mut xs, &mut ps);
            let (y, _) = forward(&case.layers, &ps, &xs, case.mode, false).expect("forward");
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        },
        &theta,
        &analytic,
        H,
        TOL,
    );
    report.max_rel_error
}

fn summarize(name: &str, errors: impl Iterator<Item = f64>) -> LayerResult {
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for e in errors {
        cases += 1;
        worst = if e.is_finite() {
            worst.max(e)
        } else {
            f64::INFINITY
        };
    }
    LayerResult {
        name: name.to_string(),
        cases,
        worst_rel: worst,
        passed: worst < TOL,
    }
}

fn loss_cases(n: usize, rng: &mut Rng) -> Vec<LayerResult> {
    let ce = (0..n).map(|_| {
        let logits: Tensor<f64> = gaussian_sample(rng, &[3, 4], 0.0, 2.0);
        let raw: Tensor<f64> = gaussian_sample(rng, &[3, 4], 0.0, 1.0);
        let target = softmax(&raw, 1.0).unwrap();
        let tau = rng.uniform_range(0.5, 3.0);
        let (_, g) = softmax_cross_entropy(&logits, &target, tau).unwrap();
        finite_diff_check(
            |t| {
                let l = Tensor::new(vec![3, 4], t.to_vec()).unwrap();
                softmax_cross_entropy(&l, &target, tau).unwrap().0
            },
            logits.data(),
            g.data(),
            H,
            TOL,
        )
        .max_rel_error
    });
    let ce = summarize("softmax_cross_entropy", ce.collect::<Vec<_>>().into_iter());
    let sq = (0..n).map(|_| {
        let a: Tensor<f64> = gaussian_sample(rng, &[2, 5], 0.0, 1.0);
        let b: Tensor<f64> = gaussian_sample(rng, &[2, 5], 0.0, 1.0);
        let g = mse_backward(&a, &b).unwrap();
        finite_diff_check(
            |t| mse(&Tensor::new(vec![2, 5], t.to_vec()).unwrap(), &b).unwrap(),
            a.data(),
            g.data(),
            H,
            TOL,
        )
        .max_rel_error
    });
    let sq = summarize("mse", sq.collect::<Vec<_>>().into_iter());
    vec![ce, sq]
}

/// Runs `n` random cases for every layer kind and loss.
pub fn run_suite(n: usize, seed: u64) -> Vec<LayerResult> {
    let root = Rng::new(seed);
    let mut out = Vec::new();
    for (ci, case) in cases().iter().enumerate() {
        let mut rng = root.split(case.name, ci as u64);
        let errs: Vec<f64> = (0..n).map(|_| check_case(case, &mut rng)).collect();
        out.push(summarize(case.name, errs.into_iter()));
    }
    out.extend(loss_cases(n, &mut root.split("losses", 0)));
    out
}
