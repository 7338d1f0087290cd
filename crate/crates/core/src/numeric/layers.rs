//! Parameterized building blocks composed from tape primitives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Forward-pass context: the tape being recorded, the weights it reads, and
/// the dropout state when training.
pub struct Ctx<'a> {
    pub tape: Tape,
    pub store: &'a ParamStore,
    dropout: Option<(f64, &'a mut ChaCha8Rng)>,
}

impl<'a> Ctx<'a> {
    pub fn eval(store: &'a ParamStore) -> Self {
        Self { tape: Tape::new(), store, dropout: None }
    }

    pub fn train(store: &'a ParamStore, p: f64, rng: &'a mut ChaCha8Rng) -> Self {
        let dropout = (p > 0.0).then_some((p, rng));
        Self { tape: Tape::new(), store, dropout }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    /// Ends the forward pass, releasing the borrow of the parameter store.
    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    /// Inverted dropout: zeroes with probability p and rescales survivors by
    /// 1/(1-p). Identity outside training.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let p = *p;
        let shape = self.tape.value(x).shape().to_vec();
        let keep = 1.0 / (1.0 - p);
        let len = shape.iter().product();
        let mask: Vec<f64> = (0..len).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        self.tape.mul_const(x, Tensor::new(shape, mask)?)
    }
}

/// Affine map `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.weight"), &[d_in, d_out], d_in, rng)?;
        let bias = if bias {
            Some(store.add_uniform(format!("{name}.bias"), &[d_out], d_in, rng)?)
        } else {
            None
        };
        Ok(Self { weight, bias, d_in, d_out })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let y = ctx.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = ctx.param(b);
                ctx.tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_const(format!("{name}.gamma"), &[dim], 1.0)?,
            beta: store.add_const(format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        ctx.tape.layer_norm(x, g, b)
    }
}

/// Weights of one LSTM cell; gate columns are ordered input, forget,
/// candidate, output.
#[derive(Clone, Debug)]
pub struct LstmWeights {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

/// Tape handles for an [`LstmWeights`] set.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
    pub d_h: usize,
}

impl LstmWeights {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_h: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_x: store.add_uniform(format!("{name}.w_x"), &[d_in, 4 * d_h], d_h, rng)?,
            w_h: store.add_uniform(format!("{name}.w_h"), &[d_h, 4 * d_h], d_h, rng)?,
            bias: store.add_uniform(format!("{name}.bias"), &[4 * d_h], d_h, rng)?,
            d_in,
            d_h,
        })
    }

    pub fn vars(&self, ctx: &mut Ctx) -> LstmVars {
        LstmVars { w_x: ctx.param(self.w_x), w_h: ctx.param(self.w_h), bias: ctx.param(self.bias), d_h: self.d_h }
    }

    /// Runs the cell left to right over the rows of `x` from a zero state and
    /// returns the stacked hidden states `[T, d_h]`.
    pub fn run(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (t, d) = ctx.tape.value(x).dims2()?;
        if d != self.d_in {
            return Err(shape_err!("LSTM expects {} input features, got {}", self.d_in, d));
        }
        let v = self.vars(ctx);
        // Input projections for all steps at once; each step adds h W_h.
        let xw = ctx.tape.matmul(x, v.w_x)?;
        let xw = ctx.tape.add_row(xw, v.bias)?;
        let mut h = ctx.tape.constant(Tensor::zeros(&[1, self.d_h]));
        let mut c = ctx.tape.constant(Tensor::zeros(&[1, self.d_h]));
        let mut states = Vec::with_capacity(t);
        for step in 0..t {
            let pre = ctx.tape.slice_rows(xw, step, 1)?;
            let hw = ctx.tape.matmul(h, v.w_h)?;
            let gates = ctx.tape.add(pre, hw)?;
            (h, c) = lstm_gates(&mut ctx.tape, gates, c, self.d_h)?;
            states.push(h);
        }
        ctx.tape.concat_rows(&states)
    }
}

/// One LSTM step: `x` is `[1, d_in]`, `h` and `c` are `[1, d_h]`.
/// Returns `(h', c')` with `c' = f*c + i*g` and `h' = o*tanh(c')`.
pub fn lstm_step(tape: &mut Tape, x: Var, h: Var, c: Var, w: &LstmVars) -> Result<(Var, Var)> {
    for (name, v) in [("h", h), ("c", c)] {
        if tape.value(v).dims2()? != (1, w.d_h) {
            return Err(shape_err!("LSTM {} has shape {:?}, expected [1, {}]", name, tape.value(v).shape(), w.d_h));
        }
    }
    let xw = tape.matmul(x, w.w_x)?;
    let hw = tape.matmul(h, w.w_h)?;
    let gates = tape.add(xw, hw)?;
    let gates = tape.add_row(gates, w.bias)?;
    lstm_gates(tape, gates, c, w.d_h)
}

fn lstm_gates(tape: &mut Tape, gates: Var, c: Var, d_h: usize) -> Result<(Var, Var)> {
    let i = tape.slice_cols(gates, 0, d_h)?;
    let f = tape.slice_cols(gates, d_h, d_h)?;
    let g = tape.slice_cols(gates, 2 * d_h, d_h)?;
    let o = tape.slice_cols(gates, 3 * d_h, d_h)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Reverses the row order of a `[T, d]` matrix.
pub fn reverse_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let t = tape.value(x).rows();
    let idx: Vec<usize> = (0..t).rev().collect();
    tape.gather_rows(x, &idx)
}
