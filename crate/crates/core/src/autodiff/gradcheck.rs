//! Central finite-difference checks for tape gradients.
//!
//! Each op check builds a random instance from a seed, reduces the op output
//! to a scalar with a fixed random weighting (so the whole Jacobian is
//! exercised), and compares the analytic gradient of every differentiable
//! input with central differences. The reported error is
//! `max |analytic − numeric| / max(max |analytic|, max |numeric|)`.
//!
//! Inputs to piecewise-linear ops (relu, max reductions) are drawn so that
//! no value sits within `KINK_GAP` of a kink, where the derivative is not
//! defined and a finite difference straddles two branches.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
const KINK_GAP: f64 = 1e-3;

/// Normwise relative disagreement between two gradient buffers.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Compares analytic and central-difference gradients of a scalar function
/// of several tensor inputs. Returns the worst relative error over inputs.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out).expect("scalar output");
    let eval = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).value().item()
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut numeric = vec![0.0; inputs[k].len()];
        let mut xs = inputs.to_vec();
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].data()[i];
            xs[k].data_mut()[i] = orig + h;
            let fp = eval(&xs);
            xs[k].data_mut()[i] = orig - h;
            let fm = eval(&xs);
            xs[k].data_mut()[i] = orig;
            *slot = (fp - fm) / (2.0 * h);
        }
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values at least `KINK_GAP` away from zero.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(KINK_GAP..1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Distinct values on a shuffled grid, so every max has a clear winner.
fn well_separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let step = 2.0 / n as f64;
    Tensor::from_fn(shape, |i| {
        -1.0 + step * order[i] as f64 + rng.random_range(0.0..0.5 * step)
    })
}

fn weighted<'t>(tape: &'t Tape, y: Var<'t>, rng_seed: u64) -> Var<'t> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x5eed);
    let w = tape.constant(uniform(&mut rng, &y.shape()));
    y.mul(w).unwrap().sum()
}

fn dim(rng: &mut ChaCha8Rng, hi: usize) -> usize {
    rng.random_range(1..=hi)
}

/// One randomly sized instance of the named op; returns the relative error.
pub fn check_op(op: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    match op {
        "matmul" => {
            let (m, k, n) = (dim(&mut rng, 5), dim(&mut rng, 5), dim(&mut rng, 5));
            let ins = [uniform(&mut rng, &[m, k]), uniform(&mut rng, &[k, n])];
            check(&ins, h, |t, v| {
                weighted(t, v[0].matmul(v[1]).unwrap(), seed)
            })
        }
        "transpose" => {
            let ins = [{
                let s = [dim(&mut rng, 5), dim(&mut rng, 5)];
                uniform(&mut rng, &s)
            }];
            check(&ins, h, |t, v| weighted(t, v[0].transpose().unwrap(), seed))
        }
        "add" | "sub" | "mul" => {
            let shape = [dim(&mut rng, 5), dim(&mut rng, 5)];
            let ins = [uniform(&mut rng, &shape), uniform(&mut rng, &shape)];
            check(&ins, h, |t, v| {
                let y = match op {
                    "add" => v[0].add(v[1]),
                    "sub" => v[0].sub(v[1]),
                    _ => v[0].mul(v[1]),
                };
                weighted(t, y.unwrap(), seed)
            })
        }
        "scale" => {
            let s = rng.random_range(-3.0..3.0);
            let ins = [{
                let s = [dim(&mut rng, 5), dim(&mut rng, 5)];
                uniform(&mut rng, &s)
            }];
            check(&ins, h, |t, v| weighted(t, v[0].scale(s), seed))
        }
        "add_bias" => {
            let (n, d) = (dim(&mut rng, 5), dim(&mut rng, 5));
            let ins = [uniform(&mut rng, &[n, d]), uniform(&mut rng, &[d])];
            check(&ins, h, |t, v| {
                weighted(t, v[0].add_bias(v[1]).unwrap(), seed)
            })
        }
        "concat_cols" => {
            let n = dim(&mut rng, 5);
            let ins = [
                {
                    let s = [n, dim(&mut rng, 4)];
                    uniform(&mut rng, &s)
                },
                {
                    let s = [n, dim(&mut rng, 4)];
                    uniform(&mut rng, &s)
                },
                {
                    let s = [n, dim(&mut rng, 4)];
                    uniform(&mut rng, &s)
                },
            ];
            check(&ins, h, |t, v| {
                weighted(t, Var::concat_cols(v).unwrap(), seed)
            })
        }
        "gather_rows" => {
            let (n, d) = (dim(&mut rng, 5), dim(&mut rng, 4));
            let k = dim(&mut rng, 8);
            let idx: Rc<[usize]> = (0..k).map(|_| rng.random_range(0..n)).collect();
            let ins = [uniform(&mut rng, &[n, d])];
            check(&ins, h, |t, v| {
                weighted(t, v[0].gather_rows(idx.clone()).unwrap(), seed)
            })
        }
        "segment_max" => {
            let segs = dim(&mut rng, 4);
            let mut offsets = vec![0];
            for _ in 0..segs {
                offsets.push(offsets.last().unwrap() + dim(&mut rng, 4));
            }
            let n = *offsets.last().unwrap();
            let ins = [{
                let s = [n, dim(&mut rng, 4)];
                well_separated(&mut rng, &s)
            }];
            check(&ins, h, |t, v| {
                weighted(t, v[0].segment_max(&offsets).unwrap(), seed)
            })
        }
        "relu" => {
            let ins = [{
                let s = [dim(&mut rng, 5), dim(&mut rng, 5)];
                off_zero(&mut rng, &s)
            }];
            check(&ins, h, |t, v| weighted(t, v[0].relu(), seed))
        }
        "row_softmax" => {
            let temp = rng.random_range(0.3..3.0);
            let ins = [{
                let s = [dim(&mut rng, 5), dim(&mut rng, 5)];
                uniform(&mut rng, &s)
            }];
            check(&ins, h, |t, v| {
                weighted(t, v[0].row_softmax(temp).unwrap(), seed)
            })
        }
        "sum" | "mean" | "squared_norm" => {
            let ins = [{
                let s = [dim(&mut rng, 5), dim(&mut rng, 5)];
                uniform(&mut rng, &s)
            }];
            check(&ins, h, |t, v| {
                let y = match op {
                    "sum" => v[0].sum(),
                    "mean" => v[0].mean(),
                    _ => v[0].squared_norm(),
                };
                weighted(t, y, seed)
            })
        }
        "sum_rows" => {
            let ins = [{
                let s = [dim(&mut rng, 5), dim(&mut rng, 5)];
                uniform(&mut rng, &s)
            }];
            check(&ins, h, |t, v| weighted(t, v[0].sum_rows(), seed))
        }
        "rotate_rows" => {
            let n = dim(&mut rng, 5);
            let mats: Rc<[[f64; 9]]> = (0..n)
                .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
                .collect();
            let ins = [uniform(&mut rng, &[n, 3])];
            check(&ins, h, |t, v| {
                weighted(t, v[0].rotate_rows(mats.clone()).unwrap(), seed)
            })
        }
        "reshape" => {
            let (a, b) = (dim(&mut rng, 4), dim(&mut rng, 4));
            let ins = [uniform(&mut rng, &[a, b])];
            check(&ins, h, |t, v| {
                weighted(t, v[0].reshape(&[b, a]).unwrap(), seed)
            })
        }
        "conv3d" => {
            let (nb, cin, cout) = (dim(&mut rng, 2), dim(&mut rng, 2), dim(&mut rng, 3));
            let (d, hh, w) = (dim(&mut rng, 3), dim(&mut rng, 4), dim(&mut rng, 4));
            let ins = [
                uniform(&mut rng, &[nb, cin, d, hh, w]),
                uniform(&mut rng, &[cout, cin, 3, 3, 3]),
                uniform(&mut rng, &[cout]),
            ];
            check(&ins, h, |t, v| {
                weighted(t, v[0].conv3d(v[1], v[2]).unwrap(), seed)
            })
        }
        "pool_in_plane" => {
            let shape = [
                dim(&mut rng, 2),
                dim(&mut rng, 2),
                dim(&mut rng, 2),
                dim(&mut rng, 5),
                dim(&mut rng, 5),
            ];
            let ins = [well_separated(&mut rng, &shape)];
            check(&ins, h, |t, v| {
                weighted(t, v[0].pool_in_plane().unwrap(), seed)
            })
        }
        other => panic!("unknown op {other}"),
    }
}

/// Every differentiable op on the tape.
pub const OPS: &[&str] = &[
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "add_bias",
    "concat_cols",
    "gather_rows",
    "segment_max",
    "relu",
    "row_softmax",
    "sum",
    "mean",
    "squared_norm",
    "sum_rows",
    "rotate_rows",
    "reshape",
    "conv3d",
    "pool_in_plane",
];
