//! Gradient checks over every tape primitive, dense layers, a full MLP and
//! the BNN forward pass, each on a fixed set of random configurations.

use dualnet_core::autodiff::{Activation, Tape, Var};
use dualnet_core::bnn::{self, BnnModel, BnnVars};
use dualnet_core::rng::Stream;
use dualnet_core::{Rng, Tensor};
use super::gradcheck::max_error;

pub const CONFIGS: u32 = 20;

fn draw(rng: &mut Rng, shape: &[usize], f: impl Fn(&mut Rng) -> f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| f(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    draw(rng, shape, |r| r.standard_normal())
}

/// Magnitude in [lo, hi] with a random sign.
fn away_from_zero(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    draw(rng, shape, |r| {
        let m = r.uniform_range(lo, hi);
        if r.uniform() < 0.5 {
            -m
        } else {
            m
        }
    })
}

/// Contracts `v` with a fixed random tensor so every coordinate of the
/// gradient is distinct and nonzero in general.
pub fn contract(tape: &mut Tape, v: Var, weights: &Tensor) -> dualnet_core::Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

struct Case {
    rng: Rng,
    rows: usize,
    inner: usize,
    cols: usize,
}

fn cases() -> impl Iterator<Item = Case> {
    (0..CONFIGS).map(|i| {
        let mut rng = Rng::new(2024).substream(Stream::Test, i);
        let mut dim = || 1 + (rng.uniform() * 5.0) as usize;
        let (rows, inner, cols) = (dim(), dim(), dim());
        Case {
            rng,
            rows,
            inner,
            cols,
        }
    })
}

/// Worst relative error of one operation on one configuration.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub config: u32,
    pub error: f64,
}

fn record(out: &mut Vec<Outcome>, name: &'static str, config: u32, error: f64) {
    out.push(Outcome { name, config, error });
}

pub fn binary_primitives() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (i, mut c) in cases().enumerate() {
        let shape = [c.rows, c.cols];
        let a = normal(&mut c.rng, &shape);
        let b = normal(&mut c.rng, &shape);
        let denom = away_from_zero(&mut c.rng, &shape, 0.5, 2.0);
        let w = normal(&mut c.rng, &shape);
        let i = i as u32;

        let ops: [(&str, fn(&mut Tape, Var, Var) -> dualnet_core::Result<Var>); 3] = [
            ("add", |t, x, y| t.add(x, y)),
            ("sub", |t, x, y| t.sub(x, y)),
            ("mul", |t, x, y| t.mul(x, y)),
        ];
        for (name, op) in ops {
            let err = max_error(&[a.clone(), b.clone()], |t, v| {
                let r = op(t, v[0], v[1])?;
                contract(t, r, &w)
            });
            record(&mut out, name, i, err);
        }
        let err = max_error(&[a.clone(), denom.clone()], |t, v| {
            let r = t.div(v[0], v[1])?;
            contract(t, r, &w)
        });
        record(&mut out, "div", i, err);
        let err = max_error(&[a.clone()], |t, v| {
            let r = t.scale(v[0], -1.7);
            contract(t, r, &w)
        });
        record(&mut out, "scale", i, err);
        let err = max_error(&[a.clone()], |t, v| {
            let r = t.offset(v[0], 0.3);
            let r = t.square(r);
            contract(t, r, &w)
        });
        record(&mut out, "offset", i, err);
    }
    out
}

pub fn matrix_primitives() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (i, mut c) in cases().enumerate() {
        let a = normal(&mut c.rng, &[c.rows, c.inner]);
        let b = normal(&mut c.rng, &[c.inner, c.cols]);
        let row = normal(&mut c.rng, &[c.cols]);
        let w = normal(&mut c.rng, &[c.rows, c.cols]);
        let err = max_error(&[a.clone(), b.clone()], |t, v| {
            let r = t.matmul(v[0], v[1])?;
            contract(t, r, &w)
        });
        record(&mut out, "matmul", i as u32, err);
        let m = normal(&mut c.rng, &[c.rows, c.cols]);
        let err = max_error(&[m, row], |t, v| {
            let r = t.add_row(v[0], v[1])?;
            contract(t, r, &w)
        });
        record(&mut out, "add_row", i as u32, err);
    }
    out
}

pub fn unary_primitives() -> Vec<Outcome> {
    let mut out = Vec::new();
    type Unary = fn(&mut Tape, Var) -> Var;
    let ops: [(&str, Unary); 6] = [
        ("tanh", |t, x| t.tanh(x)),
        ("softplus", |t, x| t.softplus(x)),
        ("exp", |t, x| t.exp(x)),
        ("square", |t, x| t.square(x)),
        ("sin", |t, x| t.sin(x)),
        ("relu", |t, x| t.relu(x)),
    ];
    for (i, mut c) in cases().enumerate() {
        let shape = [c.rows, c.cols];
        // Kept clear of the ReLU kink by more than the difference step.
        let x = away_from_zero(&mut c.rng, &shape, 0.05, 2.5);
        let positive = draw(&mut c.rng, &shape, |r| r.uniform_range(0.3, 3.0));
        let w = normal(&mut c.rng, &shape);
        for (name, op) in ops {
            let err = max_error(&[x.clone()], |t, v| {
                let r = op(t, v[0]);
                contract(t, r, &w)
            });
            record(&mut out, name, i as u32, err);
        }
        let err = max_error(&[positive], |t, v| {
            let r = t.log(v[0]);
            contract(t, r, &w)
        });
        record(&mut out, "log", i as u32, err);
    }
    out
}

pub fn reductions() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (i, mut c) in cases().enumerate() {
        let x = normal(&mut c.rng, &[c.rows, c.cols]);
        let err = max_error(&[x.clone()], |t, v| {
            let s = t.square(v[0]);
            Ok(t.sum(s))
        });
        record(&mut out, "sum", i as u32, err);
        let err = max_error(&[x], |t, v| {
            let s = t.sin(v[0]);
            let m = t.mean(s);
            Ok(t.square(m))
        });
        record(&mut out, "mean", i as u32, err);
    }
    out
}

pub fn dense_layers() -> Vec<Outcome> {
    let mut out = Vec::new();
    let acts = [
        Activation::Tanh,
        Activation::Softplus,
        Activation::Identity,
        Activation::Relu,
    ];
    for (i, mut c) in cases().enumerate() {
        let x = normal(&mut c.rng, &[c.rows, c.inner]);
        let wt = normal(&mut c.rng, &[c.inner, c.cols]);
        let b = away_from_zero(&mut c.rng, &[c.cols], 0.5, 1.0);
        let w = normal(&mut c.rng, &[c.rows, c.cols]);
        let act = acts[i % acts.len()];
        // ReLU pre-activations can land arbitrarily close to 0; only check
        // when every one is clear of the kink.
        if act == Activation::Relu {
            let z = x.matmul(&wt).unwrap();
            let near_kink = z
                .data()
                .iter()
                .enumerate()
                .any(|(k, v)| (v + b.data()[k % c.cols]).abs() < 1e-2);
            if near_kink {
                continue;
            }
        }
        let err = max_error(&[x, wt, b], |t, v| {
            let h = t.dense_forward(v[1], v[2], v[0], act)?;
            contract(t, h, &w)
        });
        record(&mut out, "dense_forward", i as u32, err);
    }
    out
}

pub fn full_tanh_mlp() -> Vec<Outcome> {
    let mut out = Vec::new();
    let widths = [6, 20, 20, 20, 1];
    for (i, mut c) in cases().enumerate() {
        let x = normal(&mut c.rng, &[c.rows, 6]);
        let mut params = Vec::new();
        for w in widths.windows(2) {
            params.push(normal(&mut c.rng, &[w[0], w[1]]).map(|v| v / (w[0] as f64).sqrt()));
            params.push(normal(&mut c.rng, &[w[1]]).map(|v| 0.1 * v));
        }
        let out_w = normal(&mut c.rng, &[c.rows, 1]);
        let err = max_error(&params, |t, v| {
            let mut h = t.constant(x.clone());
            for (l, pair) in v.chunks(2).enumerate() {
                let act = if l + 2 < widths.len() {
                    Activation::Tanh
                } else {
                    Activation::Identity
                };
                h = t.dense_forward(pair[0], pair[1], h, act)?;
            }
            contract(t, h, &out_w)
        });
        record(&mut out, "6-20-20-20-1 tanh MLP", i as u32, err);
    }
    out
}

pub fn bnn_case(seed: u32, hidden: &[usize]) -> (BnnModel, Tensor, Rng, Tensor) {
    let mut rng = Rng::new(99).substream(Stream::Test, seed);
    let mut model = BnnModel::new(6, hidden, Activation::Tanh, 1.0, 0.05, &mut rng);
    // Spread the posterior stds so softplus is exercised away from one point.
    for layer in &mut model.layers {
        for rho in [&mut layer.weight_rho, &mut layer.bias_rho] {
            for v in rho.data_mut() {
                *v = rng.uniform_range(-4.0, 1.0);
            }
        }
    }
    let rows = 1 + (rng.uniform() * 4.0) as usize;
    let x = normal(&mut rng, &[rows, 6]);
    let w = normal(&mut rng, &[rows, 1]);
    (model, x, rng.substream(Stream::BnnSampling, seed), w)
}

fn tape_bnn_vars(model: &BnnModel, v: &[Var]) -> BnnVars {
    assert_eq!(v.len(), 4 * model.layers.len());
    BnnVars {
        layers: v.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
    }
}

pub fn bnn_reparameterized_pass() -> Vec<Outcome> {
    let mut out = Vec::new();
    for i in 0..CONFIGS {
        let (model, x, noise, w) = bnn_case(i, &[20, 20, 20]);
        let params: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
        let err = max_error(&params, |t, v| {
            let vars = tape_bnn_vars(&model, v);
            let xv = t.constant(x.clone());
            let out = bnn::reparam_forward_on_tape(t, &model, &vars, xv, &mut noise.clone())?;
            contract(t, out, &w)
        });
        record(&mut out, "BNN reparameterized forward", i, err);
    }
    out
}

pub fn single_hidden_unit_bnn() -> Vec<Outcome> {
    let mut out = Vec::new();
    for i in 0..CONFIGS {
        let mut rng = Rng::new(5).substream(Stream::Test, i);
        let model = BnnModel::new(1, &[1], Activation::Tanh, 1.0, 0.5, &mut rng);
        let x = normal(&mut rng, &[3, 1]);
        let noise = rng.substream(Stream::BnnSampling, i);
        let params: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
        let err = max_error(&params, |t, v| {
            let vars = tape_bnn_vars(&model, v);
            let xv = t.constant(x.clone());
            let out = bnn::reparam_forward_on_tape(t, &model, &vars, xv, &mut noise.clone())?;
            let s = t.square(out);
            Ok(t.sum(s))
        });
        record(&mut out, "1-1-1 BNN", i, err);
    }
    out
}

pub fn elbo() -> Vec<Outcome> {
    let mut out = Vec::new();
    for i in 0..CONFIGS {
        let (model, x, noise, _) = bnn_case(i, &[5, 5]);
        let y: Vec<f64> = (0..x.rows()).map(|k| 0.3 * k as f64 - 0.5).collect();
        let params: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
        let err = max_error(&params, |t, v| {
            let vars = tape_bnn_vars(&model, v);
            bnn::elbo_on_tape(t, &model, &vars, &x, &y, &mut noise.clone(), 2, 0.01, 0.5)
        });
        record(&mut out, "negative ELBO", i, err);
    }
    out
}

/// Every family above, in order.
pub fn all() -> Vec<(&'static str, Vec<Outcome>)> {
    vec![
        ("binary primitives", binary_primitives()),
        ("matrix primitives", matrix_primitives()),
        ("unary primitives", unary_primitives()),
        ("reductions", reductions()),
        ("dense layers", dense_layers()),
        ("6-20-20-20-1 tanh MLP", full_tanh_mlp()),
        ("BNN reparameterized forward", bnn_reparameterized_pass()),
        ("1-1-1 BNN", single_hidden_unit_bnn()),
        ("negative ELBO", elbo()),
    ]
}
