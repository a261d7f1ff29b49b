use std::fmt;
use std::sync::Arc;

use super::{shape_err, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

type ElementwiseFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { src: Var, axis: usize, start: usize },
    Reshape(Var),
    Gather { src: Var, index: Arc<[Option<usize>]> },
    SumAxis { src: Var, axis: usize },
    Sum(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Clamp { src: Var, lo: f64, hi: f64 },
    Softmax(Var),
    Conv2d { input: Var, kernel: Var, bias: Var, stride: (usize, usize) },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    Map { src: Var, derivative: ElementwiseFn },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a differentiable computation.
///
/// Gradients from [`Tape::backward`] accumulate across calls until
/// [`Tape::zero_grad`] is invoked.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

/// Decomposes `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Returns the period of `b` inside `a` when `b`'s shape is a suffix of `a`'s.
fn broadcast_period(a: &[usize], b: &[usize]) -> Option<usize> {
    if a == b {
        return Some(b.iter().product());
    }
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        return Some(b.iter().product());
    }
    None
}

/// Layout of a conv/pool input: `[C, H, W]` or `[B, C, H, W]`.
fn image_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(TensorError::Invalid {
            op,
            msg: format!("expected [C,H,W] or [B,C,H,W], got {shape:?}"),
        }),
    }
}

fn image_shape(batched: bool, b: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if batched {
        vec![b, c, h, w]
    } else {
        vec![c, h, w]
    }
}

fn gemm(m: usize, k: usize, n: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), c: &mut [f64]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices cover the index ranges implied by the dimensions and strides,
    // which every caller derives from validated tensor shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Leaves receive gradients like any other node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(shape_err("matmul", sa, sb)),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, (self.data(a), k as isize, 1), (self.data(b), n as isize, 1), &mut out);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let period = broadcast_period(sa, sb).ok_or_else(|| shape_err(name, sa, sb))?;
        let (da, db) = (self.data(a), self.data(b));
        let data = da.iter().enumerate().map(|(i, &x)| f(x, db[i % period])).collect();
        Tensor::new(sa.to_vec(), data)
    }

    /// Elementwise sum; `b` may broadcast over leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(value, Op::Div(a, b)))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| f(x)).collect();
        Tensor::new(src.shape().to_vec(), data).expect("same shape")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.unary(a, |x| k * x);
        self.push(value, Op::Scale(a, k))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let value = self.unary(a, |x| x + k);
        self.push(value, Op::Offset(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no operands".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: format!("axis {axis} out of range for {base:?}"),
            });
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.data(*p)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            });
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.data(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { src: a, axis, start }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// `out[i] = a.flat[index[i]]`, or zero where the index is `None`.
    pub fn gather(&mut self, a: Var, index: Vec<Option<usize>>, shape: &[usize]) -> Result<Var, TensorError> {
        let src = self.data(a);
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= src.len()) {
            return Err(TensorError::Invalid {
                op: "gather",
                msg: format!("index {bad} out of range for {} elements", src.len()),
            });
        }
        let data = index.iter().map(|i| i.map_or(0.0, |i| src[i])).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(value, Op::Gather { src: a, index: index.into() }))
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(TensorError::Invalid {
                op: "sum_axis",
                msg: format!("axis {axis} out of range for {s:?}"),
            });
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = s;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::SumAxis { src: a, axis }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.data(a).iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.unary(a, |x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.unary(a, f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.unary(a, |x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.unary(a, f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.unary(a, f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.unary(a, f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.unary(a, |x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.unary(a, |x| x.clamp(lo, hi));
        self.push(value, Op::Clamp { src: a, lo, hi })
    }

    /// Elementwise `f` with a caller-supplied derivative `df`.
    pub fn map<F, D>(&mut self, a: Var, f: F, df: D) -> Var
    where
        F: Fn(f64) -> f64,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let value = self.unary(a, f);
        self.push(value, Op::Map { src: a, derivative: Arc::new(df) })
    }

    /// Softmax over the last axis.
    ///
    /// With a mask, entries where the mask is `false` are excluded and come out
    /// as exactly zero; a row with no unmasked entries is all zeros.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let src = self.value(a);
        let s = src.shape().to_vec();
        if let Some(m) = mask {
            if m.len() != src.numel() {
                return Err(shape_err("softmax mask", &s, &[m.len()]));
            }
        }
        let n = *s.last().unwrap_or(&1);
        let mut out = vec![0.0; src.numel()];
        for (r, row) in src.data().chunks(n.max(1)).enumerate() {
            let on = |j: usize| mask.is_none_or(|m| m[r * n + j]);
            let max = (0..n).filter(|&j| on(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in (0..n).filter(|&j| on(j)) {
                let e = (row[j] - max).exp();
                out[r * n + j] = e;
                z += e;
            }
            for v in &mut out[r * n..(r + 1) * n] {
                *v /= z;
            }
        }
        Ok(self.push(Tensor::new(s, out)?, Op::Softmax(a)))
    }

    /// 2-D cross-correlation without padding.
    ///
    /// `input` is `[C, H, W]` or `[B, C, H, W]`, `kernel` is `[Cout, C, kh, kw]`,
    /// `bias` is `[Cout]`. Output extents are `(in - k) / stride + 1`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: (usize, usize)) -> Result<Var, TensorError> {
        let batched = self.shape(input).len() == 4;
        let (b, c, h, w) = image_dims(self.shape(input), "conv2d")?;
        let (co, kh, kw) = match *self.shape(kernel) {
            [co, ci, kh, kw] if ci == c && kh <= h && kw <= w && kh > 0 && kw > 0 => (co, kh, kw),
            _ => return Err(shape_err("conv2d", self.shape(input), self.shape(kernel))),
        };
        if self.shape(bias) != [co] {
            return Err(shape_err("conv2d bias", &[co], self.shape(bias)));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::Invalid { op: "conv2d", msg: "zero stride".into() });
        }
        let ho = (h - kh) / stride.0 + 1;
        let wo = (w - kw) / stride.1 + 1;
        let (x, k, bv) = (self.data(input), self.data(kernel), self.data(bias));
        let mut out = vec![0.0; b * co * ho * wo];
        for n in 0..b {
            for o in 0..co {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = bv[o];
                        for ci in 0..c {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let xi = ((n * c + ci) * h + i * stride.0 + u) * w + j * stride.1 + v;
                                    let ki = ((o * c + ci) * kh + u) * kw + v;
                                    acc += x[xi] * k[ki];
                                }
                            }
                        }
                        out[((n * co + o) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        let value = Tensor::new(image_shape(batched, b, co, ho, wo), out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, stride }))
    }

    /// Max pooling over `[C, H, W]` or `[B, C, H, W]`; ties go to the first maximum.
    pub fn max_pool2d(&mut self, input: Var, window: (usize, usize), stride: (usize, usize)) -> Result<Var, TensorError> {
        let batched = self.shape(input).len() == 4;
        let (b, c, h, w) = image_dims(self.shape(input), "max_pool2d")?;
        let (kh, kw) = window;
        if kh == 0 || kw == 0 || kh > h || kw > w || stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::Invalid {
                op: "max_pool2d",
                msg: format!("window {window:?} stride {stride:?} on {h}x{w}"),
            });
        }
        let ho = (h - kh) / stride.0 + 1;
        let wo = (w - kw) / stride.1 + 1;
        let x = self.data(input);
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = usize::MAX;
                    for u in 0..kh {
                        for v in 0..kw {
                            let xi = (plane * h + i * stride.0 + u) * w + j * stride.1 + v;
                            if best == usize::MAX || x[xi] > x[best] {
                                best = xi;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(image_shape(batched, b, c, ho, wo), out)?;
        Ok(self.push(value, Op::MaxPool2d { input, argmax }))
    }

    /// Back-propagates from a one-element `loss`, adding into the stored gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut fresh: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        fresh[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = fresh[i].take() else { continue };
            self.propagate(i, &g, &mut fresh);
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn propagate(&self, i: usize, g: &[f64], fresh: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = self.nodes[v.0].value.numel();
            let buf = fresh[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.data(*a), self.data(*b));
                // dA = G · Bᵀ, dB = Aᵀ · G
                acc(*a, &mut |buf| gemm(m, n, k, (g, n as isize, 1), (db, 1, n as isize), buf));
                acc(*b, &mut |buf| gemm(k, m, n, (da, 1, k as isize), (g, n as isize, 1), buf));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let p = self.nodes[b.0].value.numel();
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |buf| {
                    for (idx, y) in g.iter().enumerate() {
                        buf[idx % p] += sign * y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let p = db.len();
                acc(*a, &mut |buf| {
                    for (idx, y) in g.iter().enumerate() {
                        buf[idx] += y * db[idx % p];
                    }
                });
                acc(*b, &mut |buf| {
                    for (idx, y) in g.iter().enumerate() {
                        buf[idx % p] += y * da[idx];
                    }
                });
            }
            Op::Div(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let p = db.len();
                acc(*a, &mut |buf| {
                    for (idx, y) in g.iter().enumerate() {
                        buf[idx] += y / db[idx % p];
                    }
                });
                acc(*b, &mut |buf| {
                    for (idx, y) in g.iter().enumerate() {
                        let d = db[idx % p];
                        buf[idx % p] -= y * da[idx] / (d * d);
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += k * y)),
            Op::Offset(a) | Op::Reshape(a) => acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    acc(*p, &mut |buf| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            for (x, y) in buf[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                *x += y;
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*src), *axis);
                let len = node.value.shape()[*axis];
                acc(*src, &mut |buf| {
                    for o in 0..outer {
                        let dst = (o * n + start) * inner;
                        for (x, y) in buf[dst..dst + len * inner].iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                            *x += y;
                        }
                    }
                });
            }
            Op::Gather { src, index } => acc(*src, &mut |buf| {
                for (y, idx) in g.iter().zip(index.iter()) {
                    if let Some(j) = idx {
                        buf[*j] += y;
                    }
                }
            }),
            Op::SumAxis { src, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*src), *axis);
                acc(*src, &mut |buf| {
                    for o in 0..outer {
                        for j in 0..n {
                            let dst = &mut buf[(o * n + j) * inner..(o * n + j + 1) * inner];
                            dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]).for_each(|(x, y)| *x += y);
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |buf| buf.iter_mut().for_each(|x| *x += g[0])),
            Op::LeakyRelu(a, slope) => {
                let x = self.data(*a);
                acc(*a, &mut |buf| {
                    for idx in 0..buf.len() {
                        buf[idx] += g[idx] * if x[idx] > 0.0 { 1.0 } else { *slope };
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |buf| {
                for idx in 0..buf.len() {
                    buf[idx] += g[idx] * (1.0 - out[idx] * out[idx]);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |buf| {
                for idx in 0..buf.len() {
                    buf[idx] += g[idx] * out[idx] * (1.0 - out[idx]);
                }
            }),
            Op::Exp(a) => acc(*a, &mut |buf| {
                for idx in 0..buf.len() {
                    buf[idx] += g[idx] * out[idx];
                }
            }),
            Op::Log(a) => {
                let x = self.data(*a);
                acc(*a, &mut |buf| {
                    for idx in 0..buf.len() {
                        buf[idx] += g[idx] / x[idx];
                    }
                });
            }
            Op::Sqrt(a) => acc(*a, &mut |buf| {
                for idx in 0..buf.len() {
                    buf[idx] += g[idx] * 0.5 / out[idx];
                }
            }),
            Op::Square(a) => {
                let x = self.data(*a);
                acc(*a, &mut |buf| {
                    for idx in 0..buf.len() {
                        buf[idx] += g[idx] * 2.0 * x[idx];
                    }
                });
            }
            Op::Clamp { src, lo, hi } => {
                let x = self.data(*src);
                acc(*src, &mut |buf| {
                    for idx in 0..buf.len() {
                        if x[idx] > *lo && x[idx] < *hi {
                            buf[idx] += g[idx];
                        }
                    }
                });
            }
            Op::Map { src, derivative } => {
                let x = self.data(*src);
                acc(*src, &mut |buf| {
                    for idx in 0..buf.len() {
                        buf[idx] += g[idx] * derivative(x[idx]);
                    }
                });
            }
            Op::Softmax(a) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                acc(*a, &mut |buf| {
                    for (r, row) in out.chunks(n.max(1)).enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = row.iter().zip(gr).map(|(y, gy)| y * gy).sum();
                        for j in 0..n {
                            buf[r * n + j] += row[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Conv2d { input, kernel, bias, stride } => {
                let (b, c, h, w) = image_dims(self.shape(*input), "conv2d").expect("validated");
                let ks = self.shape(*kernel);
                let (co, kh, kw) = (ks[0], ks[2], ks[3]);
                let os = node.value.shape();
                let (ho, wo) = (os[os.len() - 2], os[os.len() - 1]);
                let (x, k) = (self.data(*input), self.data(*kernel));
                let each = |f: &mut dyn FnMut(usize, usize, usize)| {
                    for n in 0..b {
                        for o in 0..co {
                            for i in 0..ho {
                                for j in 0..wo {
                                    let gi = ((n * co + o) * ho + i) * wo + j;
                                    for ci in 0..c {
                                        for u in 0..kh {
                                            for v in 0..kw {
                                                let xi = ((n * c + ci) * h + i * stride.0 + u) * w + j * stride.1 + v;
                                                let ki = ((o * c + ci) * kh + u) * kw + v;
                                                f(gi, xi, ki);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                };
                acc(*input, &mut |buf| each(&mut |gi, xi, ki| buf[xi] += g[gi] * k[ki]));
                acc(*kernel, &mut |buf| each(&mut |gi, xi, ki| buf[ki] += g[gi] * x[xi]));
                let plane = ho * wo;
                acc(*bias, &mut |buf| {
                    for (gi, y) in g.iter().enumerate() {
                        buf[(gi / plane) % co] += y;
                    }
                });
            }
            Op::MaxPool2d { input, argmax } => acc(*input, &mut |buf| {
                for (y, &src) in g.iter().zip(argmax) {
                    buf[src] += y;
                }
            }),
        }
    }
}
