use std::rc::Rc;
use std::sync::Arc;

use super::tensor::{conv1d_forward, same_shape, Tensor};
use crate::error::{Error, Result};
use crate::resample::Resampler;
use crate::spectral::StftPlan;

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Square,
    Sqrt,
    Ln,
    Abs,
}

/// `tanh` through `expm1`, about twice as fast as the libm routine here.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let m = (-2.0 * x.abs()).exp_m1();
    (-m / (2.0 + m)).copysign(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => tanh(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => {
                if x > 0.0 || x.is_nan() {
                    x
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Ln => x.ln(),
            Unary::Abs => x.abs(),
        }
    }

    /// dy/dx given input `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => (x > 0.0) as u8 as f64,
            Unary::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            Unary::Ln => 1.0 / x,
            Unary::Abs => x.signum() * (x != 0.0) as u8 as f64,
        }
    }
}

/// Binary elementwise operators on equally shaped tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

pub(crate) fn binary_fwd(op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(&format!("{op:?}"), a, b)?;
    Ok(a.zip_map(b, |x, y| op.apply(x, y)))
}

/// Saved activations of a gate for its backward pass.
pub(crate) struct GateCache {
    tanh: Vec<f64>,
    sigmoid: Vec<f64>,
}

/// `tanh(top half) * sigmoid(bottom half)` of a `[2C, T]` tensor.
pub(crate) fn gate_fwd(h: &Tensor, keep: bool) -> Result<(Tensor, Option<GateCache>)> {
    if h.shape().len() != 2 || h.rows() % 2 != 0 {
        return Err(Error::Shape(format!("gate needs an even number of rows, got {:?}", h.shape())));
    }
    let n = h.len() / 2;
    let (a, b) = h.data().split_at(n);
    let t: Vec<f64> = a.iter().map(|&v| tanh(v)).collect();
    let s: Vec<f64> = b.iter().map(|&v| sigmoid(v)).collect();
    let z = t.iter().zip(&s).map(|(t, s)| t * s).collect();
    let z = Tensor::new(vec![h.rows() / 2, h.cols()], z)?;
    Ok((z, keep.then_some(GateCache { tanh: t, sigmoid: s })))
}

/// Gradient of [`gate_fwd`] with respect to its input.
pub(crate) fn gate_bwd(shape: &[usize], cache: &GateCache, g: &Tensor) -> Tensor {
    let n = cache.tanh.len();
    let mut out = vec![0.0; 2 * n];
    let (ga, gb) = out.split_at_mut(n);
    for (j, gz) in g.data().iter().enumerate() {
        let (t, s) = (cache.tanh[j], cache.sigmoid[j]);
        ga[j] = gz * s * (1.0 - t * t);
        gb[j] = gz * t * s * (1.0 - s);
    }
    Tensor::new(shape.to_vec(), out).expect("gate shape")
}

pub(crate) fn rows_fwd(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if a.shape().len() != 2 || start + len > a.rows() {
        return Err(Error::Shape(format!("rows {start}..{} of {:?}", start + len, a.shape())));
    }
    let c = a.cols();
    Tensor::new(vec![len, c], a.data()[start * c..(start + len) * c].to_vec())
}

pub(crate) fn concat_fwd(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
        return Err(Error::Shape(format!("concat {:?} with {:?}", a.shape(), b.shape())));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(vec![a.rows() + b.rows(), a.cols()], data)
}

pub(crate) fn fit_cols_fwd(a: &Tensor, len: usize) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(&[r, len]);
    let keep = c.min(len);
    for i in 0..r {
        out.data_mut()[i * len..i * len + keep].copy_from_slice(&a.data()[i * c..i * c + keep]);
    }
    out
}

pub(crate) fn resample_fwd(a: &Tensor, r: &Resampler) -> Tensor {
    let (rows, cols) = (a.rows(), a.cols());
    let out_len = r.output_len(cols);
    let mut data = Vec::with_capacity(rows * out_len);
    for i in 0..rows {
        data.extend(r.apply(a.row_slice(i)));
    }
    Tensor::new(vec![rows, out_len], data).expect("resample shape")
}

pub(crate) fn check_stft_input(a: &Tensor) -> Result<()> {
    if a.shape().len() != 2 || a.rows() != 1 {
        return Err(Error::Shape(format!("stft expects a [1, T] signal, got {:?}", a.shape())));
    }
    Ok(())
}

/// Operations shared by the recording tape and the eager evaluator, so the
/// same network code serves training and inference.
pub trait Graph {
    type Node: Clone;

    fn constant(&mut self, t: Tensor) -> Self::Node;
    /// A trainable input. The eager graph treats it as a constant.
    fn param(&mut self, t: &Tensor) -> Self::Node;
    fn value<'a>(&'a self, n: &'a Self::Node) -> &'a Tensor;
    /// Same value, cut from the gradient path.
    fn detach(&mut self, n: &Self::Node) -> Self::Node;

    fn binary(&mut self, op: Binary, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn unary(&mut self, op: Unary, a: &Self::Node) -> Self::Node;
    fn scale(&mut self, a: &Self::Node, c: f64) -> Self::Node;
    fn add_scalar(&mut self, a: &Self::Node, c: f64) -> Self::Node;
    fn conv1d(&mut self, x: &Self::Node, w: &Self::Node, b: Option<&Self::Node>, dilation: usize) -> Result<Self::Node>;
    fn rows(&mut self, a: &Self::Node, start: usize, len: usize) -> Result<Self::Node>;
    /// Gated activation `tanh(a) * sigmoid(b)` where `a` and `b` are the top
    /// and bottom halves of the rows.
    fn gate(&mut self, h: &Self::Node) -> Result<Self::Node>;
    fn concat_rows(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    /// Crop or zero-pad the time axis of a 2-D tensor to `len`.
    fn fit_cols(&mut self, a: &Self::Node, len: usize) -> Self::Node;
    /// Resample every row of a 2-D tensor.
    fn resample(&mut self, a: &Self::Node, r: &Arc<Resampler>) -> Self::Node;
    /// Magnitude spectrogram `[frames, bins]` of a `[1, T]` signal.
    fn stft_mag(&mut self, a: &Self::Node, plan: &Arc<StftPlan>) -> Result<Self::Node>;
    fn sum(&mut self, a: &Self::Node) -> Self::Node;
    fn mean(&mut self, a: &Self::Node) -> Self::Node;

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.binary(Binary::Add, a, b)
    }
    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.binary(Binary::Sub, a, b)
    }
    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.binary(Binary::Mul, a, b)
    }
    fn div(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.binary(Binary::Div, a, b)
    }
    fn tanh(&mut self, a: &Self::Node) -> Self::Node {
        self.unary(Unary::Tanh, a)
    }
    fn sigmoid(&mut self, a: &Self::Node) -> Self::Node {
        self.unary(Unary::Sigmoid, a)
    }
    fn relu(&mut self, a: &Self::Node) -> Self::Node {
        self.unary(Unary::Relu, a)
    }
    fn leaky_relu(&mut self, a: &Self::Node, alpha: f64) -> Self::Node {
        self.unary(Unary::LeakyRelu(alpha), a)
    }
    fn square(&mut self, a: &Self::Node) -> Self::Node {
        self.unary(Unary::Square, a)
    }
    fn sqrt(&mut self, a: &Self::Node) -> Self::Node {
        self.unary(Unary::Sqrt, a)
    }
    fn ln(&mut self, a: &Self::Node) -> Self::Node {
        self.unary(Unary::Ln, a)
    }
    fn abs(&mut self, a: &Self::Node) -> Self::Node {
        self.unary(Unary::Abs, a)
    }
}

/// Forward-only evaluation; intermediate tensors are freed as soon as the
/// caller drops them.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Node = Rc<Tensor>;

    fn constant(&mut self, t: Tensor) -> Self::Node {
        Rc::new(t)
    }
    fn param(&mut self, t: &Tensor) -> Self::Node {
        Rc::new(t.clone())
    }
    fn value<'a>(&'a self, n: &'a Self::Node) -> &'a Tensor {
        n
    }
    fn detach(&mut self, n: &Self::Node) -> Self::Node {
        n.clone()
    }
    fn binary(&mut self, op: Binary, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        binary_fwd(op, a, b).map(Rc::new)
    }
    fn unary(&mut self, op: Unary, a: &Self::Node) -> Self::Node {
        Rc::new(a.map(|x| op.apply(x)))
    }
    fn scale(&mut self, a: &Self::Node, c: f64) -> Self::Node {
        Rc::new(a.map(|x| x * c))
    }
    fn add_scalar(&mut self, a: &Self::Node, c: f64) -> Self::Node {
        Rc::new(a.map(|x| x + c))
    }
    fn conv1d(&mut self, x: &Self::Node, w: &Self::Node, b: Option<&Self::Node>, dilation: usize) -> Result<Self::Node> {
        conv1d_forward(x, w, b.map(|b| b.as_ref()), dilation).map(Rc::new)
    }
    fn rows(&mut self, a: &Self::Node, start: usize, len: usize) -> Result<Self::Node> {
        rows_fwd(a, start, len).map(Rc::new)
    }
    fn gate(&mut self, h: &Self::Node) -> Result<Self::Node> {
        gate_fwd(h, false).map(|(z, _)| Rc::new(z))
    }
    fn concat_rows(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        concat_fwd(a, b).map(Rc::new)
    }
    fn fit_cols(&mut self, a: &Self::Node, len: usize) -> Self::Node {
        if a.cols() == len {
            return a.clone();
        }
        Rc::new(fit_cols_fwd(a, len))
    }
    fn resample(&mut self, a: &Self::Node, r: &Arc<Resampler>) -> Self::Node {
        Rc::new(resample_fwd(a, r))
    }
    fn stft_mag(&mut self, a: &Self::Node, plan: &Arc<StftPlan>) -> Result<Self::Node> {
        check_stft_input(a)?;
        Ok(Rc::new(plan.magnitude_only(a.data())))
    }
    fn sum(&mut self, a: &Self::Node) -> Self::Node {
        Rc::new(Tensor::scalar(a.sum()))
    }
    fn mean(&mut self, a: &Self::Node) -> Self::Node {
        Rc::new(Tensor::scalar(a.sum() / a.len().max(1) as f64))
    }
}
