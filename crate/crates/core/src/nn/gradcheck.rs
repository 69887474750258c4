//! Central finite-difference checks for every differentiable graph op.

use rand::seq::SliceRandom;
use rand::Rng;

use super::graph::{BnMode, Graph, Var};
use super::tensor::Tensor;
use crate::synth::SeededRng;

pub const STEP: f64 = 1e-4;

/// Worst relative error observed for one operator.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
}

struct Case {
    inputs: Vec<(Tensor, bool)>,
    build: Box<dyn Fn(&mut Graph, &[Var]) -> Var>,
}

fn eval(case: &Case, inputs: &[Tensor], weights: Option<&[f64]>) -> (Graph, Var, Vec<Var>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(&case.inputs)
        .map(|(t, (_, trainable))| if *trainable { g.param(t.clone()) } else { g.input(t.clone()) })
        .collect();
    let out = (case.build)(&mut g, &vars);
    let loss = match weights {
        Some(w) => g.weighted_sum(out, w.to_vec()),
        None => out,
    };
    (g, loss, vars)
}

/// Largest `|analytic - numeric|` over the tensor, relative to its scale.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

fn check_case(case: &Case, rng: &mut SeededRng) -> f64 {
    let base: Vec<Tensor> = case.inputs.iter().map(|(t, _)| t.clone()).collect();
    let (probe, out, _) = eval(case, &base, None);
    let n_out = probe.value(out).len();
    let weights: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (mut g, loss, vars) = eval(case, &base, Some(&weights));
    g.backward(loss);

    let mut worst = 0.0f64;
    for (k, (_, trainable)) in case.inputs.iter().enumerate() {
        if !trainable {
            continue;
        }
        let analytic = g
            .grad(vars[k])
            .map_or_else(|| vec![0.0; base[k].len()], |t| t.data().to_vec());
        let mut numeric = vec![0.0; base[k].len()];
        for e in 0..base[k].len() {
            let mut plus = base.clone();
            plus[k].data_mut()[e] += STEP;
            let mut minus = base.clone();
            minus[k].data_mut()[e] -= STEP;
            let (gp, lp, _) = eval(case, &plus, Some(&weights));
            let (gm, lm, _) = eval(case, &minus, Some(&weights));
            numeric[e] = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * STEP);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn uniform(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero (kinks of relu).
fn away_from_zero(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced well above the finite-difference step.
fn distinct(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 0.5).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn mask(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 }).collect();
    m[0] = 1.0;
    m
}

fn dim(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

fn make_case(op: &'static str, rng: &mut SeededRng) -> Case {
    let b = dim(rng, 1, 3);
    let t = dim(rng, 1, 5);
    let c = dim(rng, 1, 4);
    match op {
        "matmul" => {
            let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
            Case {
                inputs: vec![(uniform(rng, &[m, k]), true), (uniform(rng, &[k, n]), true)],
                build: Box::new(|g, v| g.matmul(v[0], v[1])),
            }
        }
        "add_bias" => Case {
            inputs: vec![(uniform(rng, &[b, t, c]), true), (uniform(rng, &[c]), true)],
            build: Box::new(|g, v| g.add_bias(v[0], v[1])),
        },
        "add" => Case {
            inputs: vec![(uniform(rng, &[b, c]), true), (uniform(rng, &[b, c]), true)],
            build: Box::new(|g, v| g.add(v[0], v[1])),
        },
        "mul" => Case {
            inputs: vec![(uniform(rng, &[b, c]), true), (uniform(rng, &[b, c]), true)],
            build: Box::new(|g, v| g.mul(v[0], v[1])),
        },
        "sigmoid" => Case {
            inputs: vec![(uniform(rng, &[b, c]).reshaped(&[b * c]).unwrap(), true)],
            build: Box::new(|g, v| g.sigmoid(v[0])),
        },
        "tanh" => Case {
            inputs: vec![(uniform(rng, &[b, c]), true)],
            build: Box::new(|g, v| g.tanh(v[0])),
        },
        "relu" => Case {
            inputs: vec![(away_from_zero(rng, &[b, t, c]), true)],
            build: Box::new(|g, v| g.relu(v[0])),
        },
        "mul_const" => {
            let m: Vec<f64> = (0..b * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
            Case {
                inputs: vec![(uniform(rng, &[b, c]), true)],
                build: Box::new(move |g, v| g.mul_const(v[0], m.clone())),
            }
        }
        "mask_time" => {
            let m = mask(rng, b * t);
            Case {
                inputs: vec![(uniform(rng, &[b, t, c]), true)],
                build: Box::new(move |g, v| g.mask_time(v[0], &m)),
            }
        }
        "reshape" => Case {
            inputs: vec![(uniform(rng, &[b, t, c]), true)],
            build: Box::new(move |g, v| {
                let r = g.reshape(v[0], &[b, t * c]);
                let w = g.input(Tensor::filled(&[t * c, 1], 0.7));
                g.matmul(r, w)
            }),
        },
        "concat_time" => {
            let t2 = dim(rng, 1, 4);
            Case {
                inputs: vec![(uniform(rng, &[b, t, c]), true), (uniform(rng, &[b, t2, c]), true)],
                build: Box::new(|g, v| g.concat_time(v[0], v[1])),
            }
        }
        "concat_feat" => {
            let c2 = dim(rng, 1, 4);
            Case {
                inputs: vec![(uniform(rng, &[b, t, c]), true), (uniform(rng, &[b, t, c2]), true)],
                build: Box::new(|g, v| g.concat_feat(v[0], v[1])),
            }
        }
        "lstm" => {
            let h = dim(rng, 1, 3);
            let lengths: Vec<usize> = (0..b).map(|_| rng.gen_range(1..=t)).collect();
            let reverse = rng.gen_bool(0.5);
            Case {
                inputs: vec![
                    (uniform(rng, &[b, t, c]), true),
                    (uniform(rng, &[c, 4 * h]), true),
                    (uniform(rng, &[h, 4 * h]), true),
                    (uniform(rng, &[4 * h]), true),
                ],
                build: Box::new(move |g, v| g.lstm(v[0], v[1], v[2], v[3], &lengths, reverse)),
            }
        }
        "conv1d" => {
            let k = [1, 3, 5][rng.gen_range(0..3)];
            let co = dim(rng, 1, 3);
            Case {
                inputs: vec![
                    (uniform(rng, &[b, t, c]), true),
                    (uniform(rng, &[k, c, co]), true),
                    (uniform(rng, &[co]), true),
                ],
                build: Box::new(|g, v| g.conv1d(v[0], v[1], v[2])),
            }
        }
        "batch_norm_train" => {
            let m = mask(rng, b * (t + 1));
            Case {
                inputs: vec![
                    (uniform(rng, &[b, t + 1, c]), true),
                    (uniform(rng, &[c]), true),
                    (uniform(rng, &[c]), true),
                ],
                build: Box::new(move |g, v| g.batch_norm(v[0], v[1], v[2], Some(&m), BnMode::Train { eps: 1e-5 }).0),
            }
        }
        "batch_norm_eval" => {
            let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.2..2.0)).collect();
            Case {
                inputs: vec![
                    (uniform(rng, &[b, t, c]), true),
                    (uniform(rng, &[c]), true),
                    (uniform(rng, &[c]), true),
                ],
                build: Box::new(move |g, v| {
                    let mode = BnMode::Eval {
                        mean: &mean,
                        var: &var,
                        eps: 1e-5,
                    };
                    g.batch_norm(v[0], v[1], v[2], None, mode).0
                }),
            }
        }
        "max_pool" => {
            let m = mask(rng, b * t);
            Case {
                inputs: vec![(distinct(rng, &[b, t, c]), true)],
                build: Box::new(move |g, v| g.max_pool(v[0], Some(&m)).0),
            }
        }
        "softmax_ce" => {
            let k = dim(rng, 2, 4);
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
            Case {
                inputs: vec![(uniform(rng, &[b, k]), true)],
                build: Box::new(move |g, v| g.softmax_ce(v[0], &labels)),
            }
        }
        "scoring_loss" => {
            let bands = [(0.0, 0.35), (0.35, 0.65), (0.65, 1.0)];
            let labels: Vec<(f64, f64)> = (0..b * c).map(|_| bands[rng.gen_range(0..3)]).collect();
            Case {
                inputs: vec![(uniform(rng, &[b * c, 1]), true)],
                build: Box::new(move |g, v| {
                    let s = g.sigmoid(v[0]);
                    g.scoring_loss(s, &labels)
                }),
            }
        }
        "weighted_sum" => {
            let w: Vec<f64> = (0..b * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Case {
                inputs: vec![(uniform(rng, &[b, c]), true)],
                build: Box::new(move |g, v| g.weighted_sum(v[0], w.clone())),
            }
        }
        other => panic!("no gradient check for {other}"),
    }
}

/// Every differentiable operator of [`Graph`], both losses included.
pub const OPERATORS: [&str; 20] = [
    "matmul",
    "add_bias",
    "add",
    "mul",
    "sigmoid",
    "tanh",
    "relu",
    "mul_const",
    "mask_time",
    "reshape",
    "concat_time",
    "concat_feat",
    "lstm",
    "conv1d",
    "batch_norm_train",
    "batch_norm_eval",
    "max_pool",
    "softmax_ce",
    "scoring_loss",
    "weighted_sum",
];

/// Runs `cases` random shapes per operator.
pub fn check_operator(op: &'static str, cases: usize, seed: u64) -> CheckResult {
    let mut rng = SeededRng::new(seed).derive(op);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let case = make_case(op, &mut rng);
        worst = worst.max(check_case(&case, &mut rng));
    }
    CheckResult {
        op,
        cases,
        max_rel_err: worst,
    }
}

pub fn check_all(cases: usize, seed: u64) -> Vec<CheckResult> {
    OPERATORS.iter().map(|op| check_operator(op, cases, seed)).collect()
}
