//! Wengert-list reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends one node to the tape. `backward`
//! walks the nodes in reverse execution order exactly once, accumulating
//! vector-Jacobian products, then adds parameter gradients into the
//! [`ParamStore`]. Nodes that depend on no gradient-carrying leaf are skipped.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::param::{ParamId, ParamStore};
use super::tensor::{self, check_conv, conv_out_len, Padding, Tensor};
use crate::error::{shape_err, Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Probability floor applied before the log in [`Tape::cross_entropy`].
pub const CE_EPS: f64 = 1e-12;
pub const LN_EPS: f64 = 1e-5;

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Tensor),
    AddConst(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Tensor, rstd: Vec<f64> },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { x: usize, start: usize },
    SliceRows { x: usize, start: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    Conv1d { x: usize, kernel: usize, stride: usize, padding: Padding },
    CrossEntropy { probs: usize, targets: Vec<usize>, weights: Vec<f64>, norm: f64 },
    Sum(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::MulConst(..) => "mul_const",
            Op::AddConst(_) => "add_const",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::Conv1d { .. } => "conv1d",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Node indices in the order backward processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), params: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Graph(format!("variable {v:?} does not belong to this tape")));
        }
        Ok(v.idx)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.idx].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.id, idx: self.nodes.len() - 1 }
    }

    fn ng(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free input whose gradient is reported in [`Gradients`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Reads a parameter onto the tape, once per tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        let ng = self.ng(&[ia, ib]);
        Ok(self.push(out, Op::MatMul(ia, ib), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.transpose()?;
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::Transpose(ia), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.nodes[ia].value.zip_map(&self.nodes[ib].value, |x, y| x + y)?;
        let ng = self.ng(&[ia, ib]);
        Ok(self.push(out, Op::Add(ia, ib), ng))
    }

    fn row_broadcast(&self, ia: usize, ib: usize) -> Result<(usize, usize)> {
        let (p, q) = self.nodes[ia].value.dims2()?;
        if self.nodes[ib].value.len() != q {
            return Err(shape_err!(
                "row vector {:?} does not broadcast over {:?}",
                self.nodes[ib].value.shape(),
                self.nodes[ia].value.shape()
            ));
        }
        Ok((p, q))
    }

    /// Adds a length-`q` vector to every row of a `[p, q]` matrix.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (p, q) = self.row_broadcast(ia, ib)?;
        let (av, bv) = (self.nodes[ia].value.data(), self.nodes[ib].value.data());
        let data = (0..p * q).map(|k| av[k] + bv[k % q]).collect();
        let out = Tensor::new(self.nodes[ia].value.shape().to_vec(), data)?;
        let ng = self.ng(&[ia, ib]);
        Ok(self.push(out, Op::AddRow(ia, ib), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.nodes[ia].value.zip_map(&self.nodes[ib].value, |x, y| x * y)?;
        let ng = self.ng(&[ia, ib]);
        Ok(self.push(out, Op::Mul(ia, ib), ng))
    }

    /// Multiplies every row of a `[p, q]` matrix by a length-`q` vector.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (p, q) = self.row_broadcast(ia, ib)?;
        let (av, bv) = (self.nodes[ia].value.data(), self.nodes[ib].value.data());
        let data = (0..p * q).map(|k| av[k] * bv[k % q]).collect();
        let out = Tensor::new(self.nodes[ia].value.shape().to_vec(), data)?;
        let ng = self.ng(&[ia, ib]);
        Ok(self.push(out, Op::MulRow(ia, ib), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| x * s);
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::Scale(ia, s), ng))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.zip_map(&c, |x, y| x * y)?;
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::MulConst(ia, c), ng))
    }

    /// Elementwise sum with a constant (positional encodings).
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.zip_map(c, |x, y| x + y)?;
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::AddConst(ia), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(tensor::sigmoid);
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::Sigmoid(ia), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(f64::tanh);
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::Tanh(ia), ng))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| x.max(0.0));
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::Relu(ia), ng))
    }

    /// Row-wise softmax; `mask` holds 0 or -inf per logit.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Tensor>) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.softmax_rows(mask)?;
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::Softmax(ia), ng))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let (p, q) = self.row_broadcast(ix, ig)?;
        self.row_broadcast(ix, ib)?;
        let xv = self.nodes[ix].value.data();
        let (g, b) = (self.nodes[ig].value.data(), self.nodes[ib].value.data());
        let mut xhat = vec![0.0; p * q];
        let mut out = vec![0.0; p * q];
        let mut rstd = Vec::with_capacity(p);
        for i in 0..p {
            let row = &xv[i * q..(i + 1) * q];
            let mean = row.iter().sum::<f64>() / q as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / q as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            for j in 0..q {
                let h = (row[j] - mean) * r;
                xhat[i * q + j] = h;
                out[i * q + j] = h * g[j] + b[j];
            }
        }
        let shape = self.nodes[ix].value.shape().to_vec();
        let xhat = Tensor::new(shape.clone(), xhat)?;
        let out = Tensor::new(shape, out)?;
        let ng = self.ng(&[ix, ig, ib]);
        Ok(self.push(out, Op::LayerNorm { x: ix, gamma: ig, beta: ib, xhat, rstd }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let Some(&first) = idx.first() else {
            return Err(Error::EmptyInput("concat_cols of nothing".into()));
        };
        let rows = self.nodes[first].value.rows();
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (r, c) = self.nodes[i].value.dims2()?;
            if r != rows {
                return Err(shape_err!("concat_cols row mismatch: {} vs {}", rows, r));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &idx {
                data.extend_from_slice(self.nodes[i].value.row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let ng = self.ng(&idx);
        Ok(self.push(out, Op::ConcatCols(idx), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let Some(&first) = idx.first() else {
            return Err(Error::EmptyInput("concat_rows of nothing".into()));
        };
        let cols = self.nodes[first].value.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &i in &idx {
            let (r, c) = self.nodes[i].value.dims2()?;
            if c != cols {
                return Err(shape_err!("concat_rows column mismatch: {} vs {}", cols, c));
            }
            rows += r;
            data.extend_from_slice(self.nodes[i].value.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        let ng = self.ng(&idx);
        Ok(self.push(out, Op::ConcatRows(idx), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let (p, q) = self.nodes[ia].value.dims2()?;
        if len == 0 || start + len > q {
            return Err(shape_err!("column slice {}..{} out of {} columns", start, start + len, q));
        }
        let v = &self.nodes[ia].value;
        let mut data = Vec::with_capacity(p * len);
        for r in 0..p {
            data.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![p, len], data)?;
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::SliceCols { x: ia, start }, ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let (p, q) = self.nodes[ia].value.dims2()?;
        if len == 0 || start + len > p {
            return Err(shape_err!("row slice {}..{} out of {} rows", start, start + len, p));
        }
        let data = self.nodes[ia].value.data()[start * q..(start + len) * q].to_vec();
        let out = Tensor::new(vec![len, q], data)?;
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::SliceRows { x: ia, start }, ng))
    }

    /// Selects rows by index, repeats allowed (embedding lookup, state gathering).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let (p, q) = self.nodes[ia].value.dims2()?;
        if rows.is_empty() {
            return Err(Error::EmptyInput("gather_rows with no indices".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * q);
        for &r in rows {
            if r >= p {
                return Err(shape_err!("row index {} out of {} rows", r, p));
            }
            data.extend_from_slice(self.nodes[ia].value.row(r));
        }
        let out = Tensor::new(vec![rows.len(), q], data)?;
        let ng = self.ng(&[ia]);
        Ok(self.push(out, Op::GatherRows { x: ia, idx: rows.to_vec() }, ng))
    }

    pub fn conv1d(&mut self, x: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (ix, ik) = (self.check(x)?, self.check(kernel)?);
        let out = tensor::conv1d(&self.nodes[ix].value, &self.nodes[ik].value, stride, padding)?;
        let ng = self.ng(&[ix, ik]);
        Ok(self.push(out, Op::Conv1d { x: ix, kernel: ik, stride, padding }, ng))
    }

    /// Mean negative log-likelihood of `targets` under row distributions
    /// `probs`, with probabilities floored at [`CE_EPS`]. Optional per-position
    /// weights turn the mean into a weighted mean.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize], weights: Option<&[f64]>) -> Result<Var> {
        let ip = self.check(probs)?;
        let (n, k) = self.nodes[ip].value.dims2()?;
        if targets.len() != n {
            return Err(Error::Label(format!("{} targets for {} rows", targets.len(), n)));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Label(format!("target {bad} outside [0, {k})")));
        }
        let weights = match weights {
            Some(w) if w.len() != n => {
                return Err(Error::Label(format!("{} weights for {} rows", w.len(), n)));
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; n],
        };
        let norm: f64 = weights.iter().sum();
        if norm <= 0.0 {
            return Err(Error::Numeric("cross-entropy weights sum to zero".into()));
        }
        let pv = &self.nodes[ip].value;
        let total: f64 = targets
            .iter()
            .zip(&weights)
            .enumerate()
            .map(|(i, (&t, &w))| -w * pv.get2(i, t).max(CE_EPS).ln())
            .sum();
        let ng = self.ng(&[ip]);
        Ok(self.push(
            Tensor::scalar(total / norm),
            Op::CrossEntropy { probs: ip, targets: targets.to_vec(), weights, norm },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s = self.nodes[ia].value.sum();
        let ng = self.ng(&[ia]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), ng))
    }

    /// Reverse pass from a scalar `loss`. Gradients of trainable parameters
    /// are added into `store`; frozen parameters are left untouched.
    pub fn backward(&self, loss: Var, store: Option<&mut ParamStore>) -> Result<Gradients> {
        let il = self.check(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Tensor::scalar(1.0));
        let mut visited = Vec::new();
        for i in (0..=il).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited.push(i);
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        if let Some(store) = store {
            for (&pid, &v) in &self.params {
                let p = store.get_mut(pid);
                if !p.trainable {
                    continue;
                }
                if let Some(g) = &grads[v.idx] {
                    p.grad.add_assign(g);
                }
            }
        }
        Ok(Gradients { tape: self.id, grads, visited })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |i: usize| &self.nodes[i].value;
        let needs = |i: usize| self.nodes[i].needs_grad;
        let mut acc = |i: usize, t: Tensor| {
            if !self.nodes[i].needs_grad {
                return;
            }
            match &mut grads[i] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    acc(*a, g.matmul(&val(*b).transpose()?)?);
                }
                if needs(*b) {
                    acc(*b, val(*a).transpose()?.matmul(g)?);
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                if needs(*b) {
                    acc(*b, col_sums(g, val(*b).shape())?);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y)?);
                }
                if needs(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y)?);
                }
            }
            Op::MulRow(a, b) => {
                let q = val(*b).len();
                if needs(*a) {
                    let bv = val(*b).data();
                    let data = g.data().iter().enumerate().map(|(k, &x)| x * bv[k % q]).collect();
                    acc(*a, Tensor::new(g.shape().to_vec(), data)?);
                }
                if needs(*b) {
                    let prod = g.zip_map(val(*a), |x, y| x * y)?;
                    acc(*b, col_sums(&prod, val(*b).shape())?);
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::MulConst(a, c) => acc(*a, g.zip_map(c, |x, y| x * y)?),
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gx, y| gx * y * (1.0 - y))?),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gx, y| gx * (1.0 - y * y))?),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })?),
            Op::Softmax(a) => {
                let (p, q) = node.value.dims2()?;
                let y = node.value.data();
                let gd = g.data();
                let mut out = vec![0.0; p * q];
                for r in 0..p {
                    let s = r * q;
                    let dot: f64 = (0..q).map(|j| gd[s + j] * y[s + j]).sum();
                    for j in 0..q {
                        out[s + j] = y[s + j] * (gd[s + j] - dot);
                    }
                }
                acc(*a, Tensor::new(node.value.shape().to_vec(), out)?);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (p, q) = xhat.dims2()?;
                let (gd, hd, gam) = (g.data(), xhat.data(), val(*gamma).data());
                if needs(*beta) {
                    acc(*beta, col_sums(g, val(*beta).shape())?);
                }
                if needs(*gamma) {
                    let prod = g.zip_map(xhat, |a, b| a * b)?;
                    acc(*gamma, col_sums(&prod, val(*gamma).shape())?);
                }
                if needs(*x) {
                    let mut out = vec![0.0; p * q];
                    for r in 0..p {
                        let s = r * q;
                        let gh: Vec<f64> = (0..q).map(|j| gd[s + j] * gam[j]).collect();
                        let mean_gh = gh.iter().sum::<f64>() / q as f64;
                        let mean_ghh = (0..q).map(|j| gh[j] * hd[s + j]).sum::<f64>() / q as f64;
                        for j in 0..q {
                            out[s + j] = rstd[r] * (gh[j] - mean_gh - hd[s + j] * mean_ghh);
                        }
                    }
                    acc(*x, Tensor::new(xhat.shape().to_vec(), out)?);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &i in parts {
                    let c = val(i).cols();
                    if needs(i) {
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        acc(i, Tensor::new(val(i).shape().to_vec(), data)?);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &i in parts {
                    let n = val(i).len();
                    if needs(i) {
                        acc(i, Tensor::new(val(i).shape().to_vec(), g.data()[offset..offset + n].to_vec())?);
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let (p, q) = val(*x).dims2()?;
                let len = g.cols();
                let mut out = vec![0.0; p * q];
                for r in 0..p {
                    out[r * q + start..r * q + start + len].copy_from_slice(g.row(r));
                }
                acc(*x, Tensor::new(val(*x).shape().to_vec(), out)?);
            }
            Op::SliceRows { x, start } => {
                let q = val(*x).cols();
                let mut out = vec![0.0; val(*x).len()];
                out[start * q..start * q + g.len()].copy_from_slice(g.data());
                acc(*x, Tensor::new(val(*x).shape().to_vec(), out)?);
            }
            Op::GatherRows { x, idx } => {
                let q = val(*x).cols();
                let mut out = vec![0.0; val(*x).len()];
                for (k, &r) in idx.iter().enumerate() {
                    for (o, &gv) in out[r * q..(r + 1) * q].iter_mut().zip(g.row(k)) {
                        *o += gv;
                    }
                }
                acc(*x, Tensor::new(val(*x).shape().to_vec(), out)?);
            }
            Op::Conv1d { x, kernel, stride, padding } => {
                let (xv, kv) = (val(*x), val(*kernel));
                let (t, d_in, w, d_out) = check_conv(xv, kv, *stride)?;
                let pad = padding.left(w) as isize;
                let t_out = conv_out_len(t, *stride);
                let mut gx = vec![0.0; xv.len()];
                let mut gk = vec![0.0; kv.len()];
                let (xd, kd, gd) = (xv.data(), kv.data(), g.data());
                for to in 0..t_out {
                    let grow = &gd[to * d_out..(to + 1) * d_out];
                    for j in 0..w {
                        let src = (to * stride) as isize + j as isize - pad;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let src = src as usize;
                        for c in 0..d_in {
                            let kb = (j * d_in + c) * d_out;
                            let krow = &kd[kb..kb + d_out];
                            let xval = xd[src * d_in + c];
                            let mut sx = 0.0;
                            for o in 0..d_out {
                                sx += grow[o] * krow[o];
                                gk[kb + o] += grow[o] * xval;
                            }
                            gx[src * d_in + c] += sx;
                        }
                    }
                }
                if needs(*x) {
                    acc(*x, Tensor::new(xv.shape().to_vec(), gx)?);
                }
                if needs(*kernel) {
                    acc(*kernel, Tensor::new(kv.shape().to_vec(), gk)?);
                }
            }
            Op::CrossEntropy { probs, targets, weights, norm } => {
                let pv = val(*probs);
                let k = pv.cols();
                let scale = g.item();
                let mut out = vec![0.0; pv.len()];
                for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let p = pv.get2(i, t);
                    if p > CE_EPS {
                        out[i * k + t] = -scale * w / (norm * p);
                    }
                }
                acc(*probs, Tensor::new(pv.shape().to_vec(), out)?);
            }
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
        }
        Ok(())
    }
}

fn col_sums(g: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let (p, q) = g.dims2()?;
    let mut out = vec![0.0; q];
    for r in 0..p {
        for (o, &v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Tensor::new(shape.to_vec(), out)
}
