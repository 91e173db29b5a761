use crate::error::{Error, Result};

/// Dense row-major array of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    /// A `[1, len]` row.
    pub fn row(data: Vec<f64>) -> Self {
        Self { shape: vec![1, data.len()], data }
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

    /// Leading dimension of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing dimension of a 2-D tensor.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!("{op}: {:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// `c[m x n] += a[m x k] * b[k x n]` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let reach = |rs: isize, cs: isize, r: usize, cc: usize| (r as isize - 1) * rs + (cc as isize - 1) * cs;
    assert!(reach(rsa, csa, m, k) < a.len() as isize);
    assert!(reach(rsb, csb, k, n) < b.len() as isize);
    assert!(reach(rsc, csc, m, n) < c.len() as isize);
    // SAFETY: the asserts above bound the furthest element touched through
    // each (non-negative) stride pair inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Valid output window `[t0, t1)` for a tap shifted by `shift` samples.
fn tap_window(t: usize, shift: isize) -> Option<(usize, usize)> {
    let t0 = (-shift).max(0) as usize;
    let t1 = (t as isize - shift).min(t as isize);
    if t1 <= t0 as isize {
        None
    } else {
        Some((t0, t1 as usize))
    }
}

pub(crate) fn conv_shapes(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize, usize, usize)> {
    if x.shape.len() != 2 || w.shape.len() != 3 {
        return Err(Error::Shape(format!("conv1d: input {:?}, weight {:?}", x.shape, w.shape)));
    }
    let (o, i, k) = (w.shape[0], w.shape[1], w.shape[2]);
    if x.shape[0] != i {
        return Err(Error::Shape(format!("conv1d: {} input channels, weight expects {i}", x.shape[0])));
    }
    if k % 2 == 0 {
        return Err(Error::Shape(format!("conv1d: kernel size {k} must be odd")));
    }
    if let Some(b) = b {
        if b.shape != [o] {
            return Err(Error::Shape(format!("conv1d: bias {:?} for {o} outputs", b.shape)));
        }
    }
    Ok((o, i, k, x.shape[1]))
}

/// Same-length, centred (non-causal) dilated convolution with zero padding.
/// `x: [in, T]`, `w: [out, in, k]`, `b: [out]`.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, dilation: usize) -> Result<Tensor> {
    let (o, i, k, t) = conv_shapes(x, w, b)?;
    let mut y = Tensor::zeros(&[o, t]);
    if let Some(b) = b {
        for (row, bias) in y.data.chunks_mut(t.max(1)).zip(&b.data) {
            row.iter_mut().for_each(|v| *v = *bias);
        }
    }
    let centre = (k / 2) as isize;
    for tap in 0..k {
        let shift = (tap as isize - centre) * dilation as isize;
        let Some((t0, t1)) = tap_window(t, shift) else { continue };
        gemm_acc(
            o,
            i,
            t1 - t0,
            &w.data[tap..],
            (i * k) as isize,
            k as isize,
            &x.data[(t0 as isize + shift) as usize..],
            t as isize,
            1,
            &mut y.data[t0..],
            t as isize,
            1,
        );
    }
    Ok(y)
}

/// Gradients of [`conv1d_forward`] with respect to whichever of input,
/// weight and bias are requested.
pub fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    dilation: usize,
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let (o, i, k, t) = (w.shape[0], w.shape[1], w.shape[2], x.shape[1]);
    let centre = (k / 2) as isize;
    let mut gx = want_x.then(|| Tensor::zeros(&[i, t]));
    let mut gw = want_w.then(|| Tensor::zeros(&[o, i, k]));
    for tap in 0..k {
        let shift = (tap as isize - centre) * dilation as isize;
        let Some((t0, t1)) = tap_window(t, shift) else { continue };
        let len = t1 - t0;
        let xs = (t0 as isize + shift) as usize;
        if let Some(gx) = gx.as_mut() {
            gemm_acc(
                i,
                o,
                len,
                &w.data[tap..],
                k as isize,
                (i * k) as isize,
                &gy.data[t0..],
                t as isize,
                1,
                &mut gx.data[xs..],
                t as isize,
                1,
            );
        }
        if let Some(gw) = gw.as_mut() {
            gemm_acc(
                o,
                len,
                i,
                &gy.data[t0..],
                t as isize,
                1,
                &x.data[xs..],
                1,
                t as isize,
                &mut gw.data[tap..],
                (i * k) as isize,
                k as isize,
            );
        }
    }
    let gb = want_b.then(|| {
        let data = gy.data.chunks(t.max(1)).take(o).map(|r| r.iter().sum()).collect();
        Tensor { shape: vec![o], data }
    });
    (gx, gw, gb)
}
