use std::sync::Arc;

use super::graph::{
    binary_fwd, check_stft_input, GateCache, concat_fwd, fit_cols_fwd, gate_bwd, gate_fwd, resample_fwd, rows_fwd, Binary, Graph, Unary,
};
use super::tensor::{conv1d_backward, conv1d_forward, Tensor};
use crate::error::{Error, Result};
use crate::resample::Resampler;
use crate::spectral::{StftCache, StftPlan};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Conv1d { x: Var, w: Var, b: Option<Var>, dilation: usize },
    Rows { a: Var, start: usize },
    Gate(Var, GateCache),
    Concat(Var, Var),
    FitCols(Var),
    Resample(Var, Arc<Resampler>),
    StftMag(Var, Arc<StftPlan>, StftCache),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction. `backward` may run once; afterwards `grad`
/// returns the accumulated gradient of any node (zeros when the loss does
/// not depend on it).
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Propagates gradients from the scalar `loss` to every node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let l = &self.nodes[loss.0].value;
        if l.len() != 1 {
            return Err(Error::Shape(format!("loss must be scalar, got {:?}", l.shape())));
        }
        if !l.item().is_finite() {
            return Err(Error::NonFinite(format!("loss value {}", l.item())));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(l.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Binary(op, a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.rg(*a) {
                    let ga = match op {
                        Binary::Add | Binary::Sub => g.clone(),
                        Binary::Mul => g.zip_map(bv, |g, b| g * b),
                        Binary::Div => g.zip_map(bv, |g, b| g / b),
                    };
                    Self::accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = match op {
                        Binary::Add => g.clone(),
                        Binary::Sub => g.map(|g| -g),
                        Binary::Mul => g.zip_map(av, |g, a| g * a),
                        Binary::Div => {
                            let q = av.zip_map(bv, |a, b| -a / (b * b));
                            g.zip_map(&q, |g, q| g * q)
                        }
                    };
                    Self::accumulate(grads, *b, gb);
                }
            }
            Op::Unary(op, a) => {
                if self.rg(*a) {
                    let x = val(*a).data();
                    let y = node.value.data();
                    let data = g.data().iter().enumerate().map(|(j, gv)| gv * op.derivative(x[j], y[j])).collect();
                    Self::accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data).unwrap());
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    Self::accumulate(grads, *a, g.map(|v| v * c));
                }
            }
            Op::AddScalar(a) => {
                if self.rg(*a) {
                    Self::accumulate(grads, *a, g.clone());
                }
            }
            Op::Conv1d { x, w, b, dilation } => {
                let want_b = b.is_some_and(|b| self.rg(b));
                let (gx, gw, gb) = conv1d_backward(val(*x), val(*w), g, *dilation, self.rg(*x), self.rg(*w), want_b);
                if let Some(gx) = gx {
                    Self::accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    Self::accumulate(grads, *w, gw);
                }
                if let (Some(gb), Some(b)) = (gb, b) {
                    Self::accumulate(grads, *b, gb);
                }
            }
            Op::Rows { a, start } => {
                if self.rg(*a) {
                    let src = val(*a);
                    let c = src.cols();
                    let mut ga = Tensor::zeros(src.shape());
                    ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    Self::accumulate(grads, *a, ga);
                }
            }
            Op::Gate(a, cache) => {
                if self.rg(*a) {
                    Self::accumulate(grads, *a, gate_bwd(val(*a).shape(), cache, g));
                }
            }
            Op::Concat(a, b) => {
                let split = val(*a).len();
                if self.rg(*a) {
                    let ga = Tensor::new(val(*a).shape().to_vec(), g.data()[..split].to_vec()).unwrap();
                    Self::accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = Tensor::new(val(*b).shape().to_vec(), g.data()[split..].to_vec()).unwrap();
                    Self::accumulate(grads, *b, gb);
                }
            }
            Op::FitCols(a) => {
                if self.rg(*a) {
                    Self::accumulate(grads, *a, fit_cols_fwd(g, val(*a).cols()));
                }
            }
            Op::Resample(a, r) => {
                if self.rg(*a) {
                    let src = val(*a);
                    let mut data = Vec::with_capacity(src.len());
                    for row in 0..g.rows() {
                        data.extend(r.apply_transpose(g.row_slice(row), src.cols()));
                    }
                    Self::accumulate(grads, *a, Tensor::new(src.shape().to_vec(), data).unwrap());
                }
            }
            Op::StftMag(a, plan, cache) => {
                if self.rg(*a) {
                    let gx = plan.backward(cache, g);
                    Self::accumulate(grads, *a, Tensor::new(val(*a).shape().to_vec(), gx).unwrap());
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    Self::accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item()));
                }
            }
            Op::Mean(a) => {
                if self.rg(*a) {
                    let n = val(*a).len().max(1) as f64;
                    Self::accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item() / n));
                }
            }
        }
    }

    /// Gradient of the loss with respect to `v`; zeros when unreachable.
    pub fn grad(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    pub fn has_grad(&self, v: Var) -> bool {
        matches!(self.grads.get(v.0), Some(Some(_)))
    }
}

impl Graph for Tape {
    type Node = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }
    fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, true)
    }
    fn value<'a>(&'a self, n: &'a Var) -> &'a Tensor {
        &self.nodes[n.0].value
    }
    fn detach(&mut self, n: &Var) -> Var {
        let v = self.nodes[n.0].value.clone();
        self.push(v, Op::Leaf, false)
    }
    fn binary(&mut self, op: Binary, a: &Var, b: &Var) -> Result<Var> {
        let v = binary_fwd(op, &self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let rg = self.rg(*a) || self.rg(*b);
        Ok(self.push(v, Op::Binary(op, *a, *b), rg))
    }
    fn unary(&mut self, op: Unary, a: &Var) -> Var {
        let v = self.nodes[a.0].value.map(|x| op.apply(x));
        let rg = self.rg(*a);
        self.push(v, Op::Unary(op, *a), rg)
    }
    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.map(|x| x * c);
        let rg = self.rg(*a);
        self.push(v, Op::Scale(*a, c), rg)
    }
    fn add_scalar(&mut self, a: &Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.map(|x| x + c);
        let rg = self.rg(*a);
        self.push(v, Op::AddScalar(*a), rg)
    }
    fn conv1d(&mut self, x: &Var, w: &Var, b: Option<&Var>, dilation: usize) -> Result<Var> {
        let v = conv1d_forward(&self.nodes[x.0].value, &self.nodes[w.0].value, b.map(|b| &self.nodes[b.0].value), dilation)?;
        let rg = self.rg(*x) || self.rg(*w) || b.is_some_and(|b| self.rg(*b));
        Ok(self.push(v, Op::Conv1d { x: *x, w: *w, b: b.copied(), dilation }, rg))
    }
    fn rows(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        let v = rows_fwd(&self.nodes[a.0].value, start, len)?;
        let rg = self.rg(*a);
        Ok(self.push(v, Op::Rows { a: *a, start }, rg))
    }
    fn gate(&mut self, h: &Var) -> Result<Var> {
        let rg = self.rg(*h);
        let (v, cache) = gate_fwd(&self.nodes[h.0].value, rg)?;
        match cache {
            Some(c) => Ok(self.push(v, Op::Gate(*h, c), true)),
            None => Ok(self.push(v, Op::Leaf, false)),
        }
    }
    fn concat_rows(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = concat_fwd(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let rg = self.rg(*a) || self.rg(*b);
        Ok(self.push(v, Op::Concat(*a, *b), rg))
    }
    fn fit_cols(&mut self, a: &Var, len: usize) -> Var {
        if self.nodes[a.0].value.cols() == len {
            return *a;
        }
        let v = fit_cols_fwd(&self.nodes[a.0].value, len);
        let rg = self.rg(*a);
        self.push(v, Op::FitCols(*a), rg)
    }
    fn resample(&mut self, a: &Var, r: &Arc<Resampler>) -> Var {
        let v = resample_fwd(&self.nodes[a.0].value, r);
        let rg = self.rg(*a);
        self.push(v, Op::Resample(*a, r.clone()), rg)
    }
    fn stft_mag(&mut self, a: &Var, plan: &Arc<StftPlan>) -> Result<Var> {
        check_stft_input(&self.nodes[a.0].value)?;
        let (v, cache) = plan.forward(self.nodes[a.0].value.data());
        let rg = self.rg(*a);
        Ok(self.push(v, Op::StftMag(*a, plan.clone(), cache), rg))
    }
    fn sum(&mut self, a: &Var) -> Var {
        let v = Tensor::scalar(self.nodes[a.0].value.sum());
        let rg = self.rg(*a);
        self.push(v, Op::Sum(*a), rg)
    }
    fn mean(&mut self, a: &Var) -> Var {
        let t = &self.nodes[a.0].value;
        let v = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        let rg = self.rg(*a);
        self.push(v, Op::Mean(*a), rg)
    }
}
