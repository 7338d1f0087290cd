//! Dense row-major tensors and the raw kernels behind the tape ops.

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("invalid shape {:?}: every dimension must be >= 1", shape));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(shape_err!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; len]).expect("zeros: non-empty shape")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; len]).expect("full: non-empty shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Builds a matrix from row slices; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns, treating a 1-D tensor as a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [c] => Ok((1, *c)),
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err!("expected a matrix, got shape {:?}", s)),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map(|d| d.0).unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.dims2().map(|d| d.1).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(shape_err!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err!("elementwise op on {:?} and {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (p, q) = self.dims2()?;
        let (q2, r) = other.dims2()?;
        if q != q2 {
            return Err(shape_err!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape,
                other.shape
            ));
        }
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            let orow = &mut out[i * r..(i + 1) * r];
            for k in 0..q {
                let a = self.data[i * q + k];
                let brow = &other.data[k * r..(k + 1) * r];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![p, r], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (p, q) = self.dims2()?;
        let mut out = vec![0.0; p * q];
        for i in 0..p {
            for j in 0..q {
                out[j * p + i] = self.data[i * q + j];
            }
        }
        Tensor::new(vec![q, p], out)
    }

    /// Row-wise softmax with max subtraction. `mask` is an additive matrix of
    /// zeros and negative infinities with the same shape as `self`.
    pub fn softmax_rows(&self, mask: Option<&Tensor>) -> Result<Tensor> {
        let (p, q) = self.dims2()?;
        if let Some(m) = mask {
            if m.dims2()? != (p, q) {
                return Err(shape_err!("mask {:?} does not match logits {:?}", m.shape, self.shape));
            }
        }
        if self.data.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let mut out = vec![0.0; p * q];
        for i in 0..p {
            let row = &self.data[i * q..(i + 1) * q];
            let logit = |j: usize| match mask {
                Some(m) => row[j] + m.data[i * q + j],
                None => row[j],
            };
            let max = (0..q).map(logit).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Numeric(format!("softmax row {i} is fully masked")));
            }
            let orow = &mut out[i * q..(i + 1) * q];
            let mut total = 0.0;
            for (j, o) in orow.iter_mut().enumerate() {
                *o = (logit(j) - max).exp();
                total += *o;
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        Tensor::new(vec![p, q], out)
    }
}

/// Zero padding scheme for [`conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `w / 2` frames on each side; output frame t is centred on input t.
    Same,
    /// `w - 1` frames on the left only; output frame t never sees input beyond t.
    Causal,
}

impl Padding {
    pub fn left(self, width: usize) -> usize {
        match self {
            Padding::Same => width / 2,
            Padding::Causal => width - 1,
        }
    }
}

pub fn conv_out_len(frames: usize, stride: usize) -> usize {
    frames.div_ceil(stride)
}

pub(crate) fn check_conv(x: &Tensor, kernel: &Tensor, stride: usize) -> Result<(usize, usize, usize, usize)> {
    let (t, d_in) = x.dims2()?;
    let &[w, kd_in, d_out] = kernel.shape() else {
        return Err(shape_err!("conv kernel must be [width, d_in, d_out], got {:?}", kernel.shape()));
    };
    if w % 2 == 0 {
        return Err(Error::Config(format!("conv kernel width {w} must be odd")));
    }
    if !(stride == 1 || stride == 2) {
        return Err(Error::Config(format!("conv stride {stride} must be 1 or 2")));
    }
    if kd_in != d_in {
        return Err(shape_err!(
            "conv input {:?} does not match kernel {:?}",
            x.shape(),
            kernel.shape()
        ));
    }
    Ok((t, d_in, w, d_out))
}

/// Zero-padded 1-D convolution over time. `x` is `[T, d_in]`, `kernel` is
/// `[w, d_in, d_out]`; the output has `ceil(T / stride)` rows.
pub fn conv1d(x: &Tensor, kernel: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let (t, d_in, w, d_out) = check_conv(x, kernel, stride)?;
    let pad = padding.left(w) as isize;
    let t_out = conv_out_len(t, stride);
    let mut out = vec![0.0; t_out * d_out];
    let xd = x.data();
    let kd = kernel.data();
    for to in 0..t_out {
        let orow = &mut out[to * d_out..(to + 1) * d_out];
        for j in 0..w {
            let src = (to * stride) as isize + j as isize - pad;
            if src < 0 || src >= t as isize {
                continue;
            }
            let xrow = &xd[src as usize * d_in..(src as usize + 1) * d_in];
            for (c, &xv) in xrow.iter().enumerate() {
                let krow = &kd[(j * d_in + c) * d_out..(j * d_in + c + 1) * d_out];
                for (o, &kv) in orow.iter_mut().zip(krow) {
                    *o += xv * kv;
                }
            }
        }
    }
    Tensor::new(vec![t_out, d_out], out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_and_direct() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(a.matmul(&Tensor::eye(2)).unwrap(), a);
        let r = m(&[&[1.0, 2.0]]).matmul(&m(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(r.data(), &[11.0]);
        let z = Tensor::zeros(&[3, 2]).matmul(&m(&[&[5.0, -1.0, 2.0], &[0.5, 7.0, 1.0]])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let err = Tensor::zeros(&[2, 3]).matmul(&Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = m(&[&[0.0, 0.0, 0.0, 0.0]]).softmax_rows(None).unwrap();
        assert_eq!(s.data(), &[0.25; 4]);
        let s = m(&[&[42.0]]).softmax_rows(None).unwrap();
        assert_eq!(s.data(), &[1.0]);
        // e^1, e^2, e^3 normalized, evaluated independently with high precision.
        let s = m(&[&[1.0, 2.0, 3.0]]).softmax_rows(None).unwrap();
        let expected = [0.090_030_573_170_380_46, 0.244_728_471_054_797_64, 0.665_240_955_774_821_9];
        for (a, b) in s.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(m(&[&[f64::NAN, 0.0]]).softmax_rows(None).is_err());
    }

    #[test]
    fn conv_length_and_identity() {
        let x = Tensor::new(vec![10, 2], (0..20).map(|v| v as f64).collect()).unwrap();
        let mut k = Tensor::zeros(&[5, 2, 2]);
        // centre tap identity
        k.data_mut()[(2 * 2) * 2] = 1.0;
        k.data_mut()[(2 * 2 + 1) * 2 + 1] = 1.0;
        assert_eq!(conv1d(&x, &k, 1, Padding::Same).unwrap(), x);
        assert_eq!(conv1d(&x, &k, 2, Padding::Same).unwrap().rows(), 5);
        assert!(conv1d(&x, &Tensor::zeros(&[4, 2, 2]), 1, Padding::Same).is_err());
        assert!(conv1d(&x, &k, 3, Padding::Same).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
