//! Central finite-difference verification of tape gradients.
//!
//! Numeric gradients come only from re-running forward passes, never from
//! the backward code, so agreement is an independent check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{lstm_step, LstmVars};
use super::param::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::{Padding, Tensor};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// Norm-wise relative error `|a - n| / max(|a|, |n|)`, 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Graph builder: receives the tape and input leaves, returns a scalar.
pub type GraphFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Worst relative error over all inputs of `f` at the point `inputs`.
pub fn check_inputs(inputs: &[Tensor], f: &GraphFn) -> Result<f64> {
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.input(x.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.value(out).item())
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.input(x.clone())).collect();
    let out = f(&mut t, &vars)?;
    let grads = t.backward(out, None)?;
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);
        let mut numeric = vec![0.0; x.len()];
        let mut probe = inputs.to_vec();
        for i in 0..x.len() {
            let orig = x.data()[i];
            probe[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            numeric[i] = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Checks gradients of a scalar loss with respect to trainable parameters.
/// `loss` builds the graph from the store; at most `per_param` entries of
/// each parameter are probed (spread evenly). Returns the worst relative
/// error and the name of the parameter that produced it.
pub fn check_params(
    store: &ParamStore,
    per_param: usize,
    loss: &dyn Fn(&ParamStore) -> Result<(Tape, Var)>,
) -> Result<(f64, String)> {
    let mut work = store.clone();
    work.zero_grad();
    let (tape, out) = loss(&work)?;
    tape.backward(out, Some(&mut work))?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let (t, v) = loss(s)?;
        Ok(t.value(v).item())
    };
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = work.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = work.get(id).value.len();
        let stride = n.div_ceil(per_param.max(1)).max(1);
        let idx: Vec<usize> = (0..n).step_by(stride).collect();
        let analytic: Vec<f64> = idx.iter().map(|&i| work.get(id).grad.data()[i]).collect();
        let mut probe = store.clone();
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = probe.get(id).value.data()[i];
            probe.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let err = relative_error(&analytic, &numeric);
        if err >= worst.0 {
            worst = (err, work.get(id).name.clone());
        }
    }
    Ok(worst)
}

/// One named differentiable operation exercised by the registry.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    pub graph: Box<GraphFn>,
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay outside the FD stencil.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    rand_t(rng, shape).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Projects any output onto a fixed pseudo-random direction so every
/// output entry contributes to the checked scalar.
fn weighted_sum(t: &mut Tape, out: Var) -> Result<Var> {
    let shape = t.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
    let y = t.mul_const(out, Tensor::new(shape, w)?)?;
    t.sum(y)
}

fn causal_mask(n: usize) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            m.data_mut()[i * n + j] = f64::NEG_INFINITY;
        }
    }
    m
}

macro_rules! case {
    ($name:expr, $inputs:expr, $graph:expr) => {
        OpCase { name: $name, inputs: $inputs, graph: Box::new($graph) }
    };
}

/// Every differentiable primitive on the tape, plus the composite LSTM
/// step and a scaled dot-product attention.
pub fn registry() -> Vec<OpCase> {
    vec![
        case!("matmul", |r| vec![rand_t(r, &[3, 4]), rand_t(r, &[4, 2])], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        case!("transpose", |r| vec![rand_t(r, &[3, 2])], |t, v| {
            let y = t.transpose(v[0])?;
            weighted_sum(t, y)
        }),
        case!("add", |r| vec![rand_t(r, &[2, 3]), rand_t(r, &[2, 3])], |t, v| {
            let y = t.add(v[0], v[1])?;
            let y = t.mul(y, v[0])?;
            weighted_sum(t, y)
        }),
        case!("add_row", |r| vec![rand_t(r, &[3, 4]), rand_t(r, &[4])], |t, v| {
            let y = t.add_row(v[0], v[1])?;
            let y = t.tanh(y)?;
            weighted_sum(t, y)
        }),
        case!("mul", |r| vec![rand_t(r, &[2, 3]), rand_t(r, &[2, 3])], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        case!("mul_row", |r| vec![rand_t(r, &[3, 4]), rand_t(r, &[4])], |t, v| {
            let y = t.mul_row(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        case!("scale", |r| vec![rand_t(r, &[2, 2])], |t, v| {
            let y = t.scale(v[0], -1.7)?;
            let y = t.mul(y, v[0])?;
            weighted_sum(t, y)
        }),
        case!("mul_const", |r| vec![rand_t(r, &[2, 3])], |t, v| {
            let c = Tensor::new(vec![2, 3], vec![0.0, 2.0, 2.0, 0.0, 2.0, 0.0])?;
            let y = t.mul_const(v[0], c)?;
            let y = t.mul(y, v[0])?;
            weighted_sum(t, y)
        }),
        case!("add_const", |r| vec![rand_t(r, &[2, 3])], |t, v| {
            let y = t.add_const(v[0], &Tensor::full(&[2, 3], 0.3))?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        }),
        case!("sigmoid", |r| vec![rand_t(r, &[3, 3]).map(|x| 3.0 * x)], |t, v| {
            let y = t.sigmoid(v[0])?;
            weighted_sum(t, y)
        }),
        case!("tanh", |r| vec![rand_t(r, &[3, 3]).map(|x| 2.0 * x)], |t, v| {
            let y = t.tanh(v[0])?;
            weighted_sum(t, y)
        }),
        case!("relu", |r| vec![rand_away_from_zero(r, &[3, 3])], |t, v| {
            let y = t.relu(v[0])?;
            let y = t.mul(y, v[0])?;
            weighted_sum(t, y)
        }),
        case!("softmax_rows", |r| vec![rand_t(r, &[3, 5]).map(|x| 2.0 * x)], |t, v| {
            let y = t.softmax_rows(v[0], None)?;
            weighted_sum(t, y)
        }),
        case!("softmax_rows_causal", |r| vec![rand_t(r, &[4, 4])], |t, v| {
            let y = t.softmax_rows(v[0], Some(&causal_mask(4)))?;
            weighted_sum(t, y)
        }),
        case!("layer_norm", |r| vec![rand_t(r, &[3, 5]), rand_t(r, &[5]), rand_t(r, &[5])], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(t, y)
        }),
        case!("concat_cols", |r| vec![rand_t(r, &[2, 3]), rand_t(r, &[2, 1])], |t, v| {
            let y = t.concat_cols(&[v[0], v[1], v[0]])?;
            weighted_sum(t, y)
        }),
        case!("concat_rows", |r| vec![rand_t(r, &[2, 3]), rand_t(r, &[1, 3])], |t, v| {
            let y = t.concat_rows(&[v[1], v[0], v[1]])?;
            weighted_sum(t, y)
        }),
        case!("slice_cols", |r| vec![rand_t(r, &[3, 5])], |t, v| {
            let y = t.slice_cols(v[0], 1, 3)?;
            weighted_sum(t, y)
        }),
        case!("slice_rows", |r| vec![rand_t(r, &[4, 2])], |t, v| {
            let y = t.slice_rows(v[0], 1, 2)?;
            weighted_sum(t, y)
        }),
        case!("gather_rows", |r| vec![rand_t(r, &[4, 3])], |t, v| {
            let y = t.gather_rows(v[0], &[3, 0, 3, 1])?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        }),
        case!("conv1d_same", |r| vec![rand_t(r, &[7, 3]), rand_t(r, &[5, 3, 2])], |t, v| {
            let y = t.conv1d(v[0], v[1], 1, Padding::Same)?;
            weighted_sum(t, y)
        }),
        case!("conv1d_stride2_causal", |r| vec![rand_t(r, &[8, 2]), rand_t(r, &[3, 2, 3])], |t, v| {
            let y = t.conv1d(v[0], v[1], 2, Padding::Causal)?;
            weighted_sum(t, y)
        }),
        case!("cross_entropy", |r| vec![rand_t(r, &[4, 4])], |t, v| {
            let p = t.softmax_rows(v[0], None)?;
            t.cross_entropy(p, &[0, 3, 1, 1], None)
        }),
        case!("cross_entropy_weighted", |r| vec![rand_t(r, &[3, 4])], |t, v| {
            let p = t.softmax_rows(v[0], None)?;
            t.cross_entropy(p, &[2, 0, 3], Some(&[0.5, 2.0, 1.0]))
        }),
        case!("sum", |r| vec![rand_t(r, &[2, 3])], |t, v| {
            let y = t.mul(v[0], v[0])?;
            t.sum(y)
        }),
        case!(
            "lstm_step",
            |r| vec![
                rand_t(r, &[1, 3]),
                rand_t(r, &[1, 2]),
                rand_t(r, &[1, 2]),
                rand_t(r, &[3, 8]),
                rand_t(r, &[2, 8]),
                rand_t(r, &[8]),
            ],
            |t, v| {
                let w = LstmVars { w_x: v[3], w_h: v[4], bias: v[5], d_h: 2 };
                let (h, c) = lstm_step(t, v[0], v[1], v[2], &w)?;
                let (h, c) = lstm_step(t, v[0], h, c, &w)?;
                let y = t.concat_cols(&[h, c])?;
                weighted_sum(t, y)
            }
        ),
        case!(
            "scaled_dot_attention",
            |r| vec![rand_t(r, &[3, 4]), rand_t(r, &[5, 4]), rand_t(r, &[5, 2])],
            |t, v| {
                let kt = t.transpose(v[1])?;
                let logits = t.matmul(v[0], kt)?;
                let logits = t.scale(logits, 0.5)?;
                let a = t.softmax_rows(logits, None)?;
                let y = t.matmul(a, v[2])?;
                weighted_sum(t, y)
            }
        ),
    ]
}

#[derive(Clone, Debug)]
pub struct OpReport {
    pub name: &'static str,
    pub worst_rel_err: f64,
    pub passed: bool,
}

/// Runs every registry case at `seeds` random points.
pub fn run_registry(base_seed: u64, seeds: usize) -> Result<Vec<OpReport>> {
    let mut out = Vec::new();
    for case in registry() {
        let mut worst: f64 = 0.0;
        for s in 0..seeds as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(s));
            let inputs = (case.inputs)(&mut rng);
            worst = worst.max(check_inputs(&inputs, case.graph.as_ref())?);
        }
        out.push(OpReport { name: case.name, worst_rel_err: worst, passed: worst < REL_TOL });
    }
    Ok(out)
}
