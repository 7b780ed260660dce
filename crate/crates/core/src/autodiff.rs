//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every op appends a node whose parents precede it, so
//! reverse index order is a valid topological order for the backward sweep.
//! Graphs are rebuilt for every forward pass.
//!
//! Every op checks its output for NaN/Inf and reports it as an error instead of
//! letting it propagate.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::quant::{normal_cdf, normal_pdf};
use crate::tensor::{gemm, Float, Mat, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise operations exposed through [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Square,
    Sqrt,
    Abs,
    Ln,
    LeakyRelu(f64),
    ClampMin(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        padding: usize,
        taps: Vec<(usize, usize)>,
    },
    Binary(Binary, Var, Var),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    Ln(Var),
    LeakyRelu(Var, T),
    ClampMin(Var, T),
    Clamp(Var, T, T),
    Scale(Var, T),
    Offset(Var),
    Sum(Var),
    Mean(Var),
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    GaussianLikelihood {
        v: Var,
        mu: Var,
        sigma: Var,
    },
}

struct Node<'a, T: Float> {
    value: Cow<'a, Tensor<T>>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'a, T: Float> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Float> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Geometry of a (possibly batched) 2-D convolution.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    batched: bool,
}

impl ConvGeom {
    fn new(input: &[usize], weight: &[usize], padding: usize) -> Result<Self> {
        let (batch, c_in, h, w, batched) = match *input {
            [c, h, w] => (1, c, h, w, false),
            [n, c, h, w] => (n, c, h, w, true),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d input must be C x H x W or N x C x H x W, got {input:?}"
                )))
            }
        };
        let [c_out, wc_in, kh, kw] = *weight else {
            return Err(Error::shape(format!(
                "conv2d weight must be Cout x Cin x Kh x Kw, got {weight:?}"
            )));
        };
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv2d weight expects {wc_in} input channels, input has {c_in}"
            )));
        }
        if kh == 0 || kw == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} with padding {padding} does not fit {h}x{w}"
            )));
        }
        Ok(ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            pad: padding,
            oh: h + 2 * padding - kh + 1,
            ow: w + 2 * padding - kw + 1,
            batched,
        })
    }

    fn out_shape(&self) -> Vec<usize> {
        if self.batched {
            vec![self.batch, self.c_out, self.oh, self.ow]
        } else {
            vec![self.c_out, self.oh, self.ow]
        }
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// True when the input can be fed to gemm without an im2col copy.
    fn is_pointwise(&self, taps: &[(usize, usize)]) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0 && taps.len() == 1 && self.batch == 1
    }

    /// Unfolds the input into a `(c_in * taps) x (batch * positions)` matrix.
    fn im2col<T: Float>(&self, x: &[T], taps: &[(usize, usize)]) -> Vec<T> {
        let p = self.positions();
        let cols_n = self.batch * p;
        let mut cols = vec![T::zero(); self.c_in * taps.len() * cols_n];
        for n in 0..self.batch {
            for ci in 0..self.c_in {
                let plane = &x[(n * self.c_in + ci) * self.h * self.w..][..self.h * self.w];
                for (t, &(ky, kx)) in taps.iter().enumerate() {
                    let row = &mut cols[(ci * taps.len() + t) * cols_n + n * p..][..p];
                    for oy in 0..self.oh {
                        let iy = oy + ky;
                        if iy < self.pad || iy >= self.h + self.pad {
                            continue;
                        }
                        let iy = iy - self.pad;
                        for ox in 0..self.ow {
                            let ix = ox + kx;
                            if ix < self.pad || ix >= self.w + self.pad {
                                continue;
                            }
                            row[oy * self.ow + ox] = plane[iy * self.w + ix - self.pad];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`]: accumulates columns back into an input gradient.
    fn col2im_add<T: Float>(&self, cols: &[T], taps: &[(usize, usize)], gx: &mut [T]) {
        let p = self.positions();
        let cols_n = self.batch * p;
        for n in 0..self.batch {
            for ci in 0..self.c_in {
                let plane = &mut gx[(n * self.c_in + ci) * self.h * self.w..][..self.h * self.w];
                for (t, &(ky, kx)) in taps.iter().enumerate() {
                    let row = &cols[(ci * taps.len() + t) * cols_n + n * p..][..p];
                    for oy in 0..self.oh {
                        let iy = oy + ky;
                        if iy < self.pad || iy >= self.h + self.pad {
                            continue;
                        }
                        let iy = iy - self.pad;
                        for ox in 0..self.ow {
                            let ix = ox + kx;
                            if ix < self.pad || ix >= self.w + self.pad {
                                continue;
                            }
                            plane[iy * self.w + ix - self.pad] += row[oy * self.ow + ox];
                        }
                    }
                }
            }
        }
    }

    /// Gathers the active taps of a full weight into a `c_out x (c_in * taps)` matrix.
    fn gather_weight<T: Float>(&self, w: &[T], taps: &[(usize, usize)]) -> Vec<T> {
        let k = self.c_in * taps.len();
        let mut out = vec![T::zero(); self.c_out * k];
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                for (t, &(ky, kx)) in taps.iter().enumerate() {
                    out[co * k + ci * taps.len() + t] =
                        w[((co * self.c_in + ci) * self.kh + ky) * self.kw + kx];
                }
            }
        }
        out
    }

    fn scatter_weight_grad<T: Float>(&self, g: &[T], taps: &[(usize, usize)], gw: &mut [T]) {
        let k = self.c_in * taps.len();
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                for (t, &(ky, kx)) in taps.iter().enumerate() {
                    gw[((co * self.c_in + ci) * self.kh + ky) * self.kw + kx] +=
                        g[co * k + ci * taps.len() + t];
                }
            }
        }
    }

    /// `[c, batch * p]` (channel-major over the whole batch) to `[batch, c, p]`.
    fn unfold_channels<T: Float>(&self, src: &[T], c: usize) -> Vec<T> {
        let p = self.positions();
        let mut out = vec![T::zero(); src.len()];
        for ch in 0..c {
            for n in 0..self.batch {
                out[(n * c + ch) * p..][..p].copy_from_slice(&src[ch * self.batch * p + n * p..][..p]);
            }
        }
        out
    }

    /// `[batch, c, p]` to `[c, batch * p]`.
    fn fold_channels<T: Float>(&self, src: &[T], c: usize) -> Vec<T> {
        let p = self.positions();
        let mut out = vec![T::zero(); src.len()];
        for ch in 0..c {
            for n in 0..self.batch {
                out[ch * self.batch * p + n * p..][..p].copy_from_slice(&src[(n * c + ch) * p..][..p]);
            }
        }
        out
    }
}

/// Row-major strides of `shape`, with zero stride on broadcast (size-1) axes
/// of `src` relative to `out`.
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; src.len()];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i] = if src[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= src[i];
    }
    strides
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cannot broadcast {a:?} with {b:?}: rank differs"
        )));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_broadcast(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if a == out && b == out {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let mut idx = vec![0usize; out.len()];
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..n {
        f(i, ia, ib);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

impl<'a, T: Float> Graph<'a, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(value), false)
    }

    /// Borrowed constant, e.g. frozen model weights.
    pub fn constant_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.push_leaf(Cow::Borrowed(value), false)
    }

    /// Trainable leaf; receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(value), true)
    }

    /// Borrowed trainable leaf.
    pub fn param_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.push_leaf(Cow::Borrowed(value), true)
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            grad: None,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op<T>) -> Vec<Var> {
        match *op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![input, weight];
                v.extend(bias);
                v
            }
            Op::Binary(_, a, b) => vec![a, b],
            Op::Square(a)
            | Op::Sqrt(a)
            | Op::Abs(a)
            | Op::Ln(a)
            | Op::LeakyRelu(a, _)
            | Op::ClampMin(a, _)
            | Op::Clamp(a, _, _)
            | Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a) => vec![a],
            Op::Narrow { input, .. } => vec![input],
            Op::GaussianLikelihood { v, mu, sigma } => vec![v, mu, sigma],
        }
    }

    // ---------------------------------------------------------------- conv

    /// Stride-1 cross-correlation with zero padding.
    ///
    /// `input` is `C_in x H x W` or `N x C_in x H x W`, `weight` is
    /// `C_out x C_in x Kh x Kw` and `bias` is `C_out`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        let ws = self.value(weight).shape().to_vec();
        let taps: Vec<(usize, usize)> = match ws.as_slice() {
            [_, _, kh, kw] => (0..*kh).flat_map(|y| (0..*kw).map(move |x| (y, x))).collect(),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d weight must be rank 4, got {ws:?}"
                )))
            }
        };
        self.conv2d_taps(input, weight, bias, padding, taps)
    }

    /// Convolution restricted to the kernel taps where `allowed[ky * kw + kx]`
    /// is set. Disallowed taps behave as zero weights and get zero gradient.
    pub fn conv2d_masked(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        padding: usize,
        allowed: &[bool],
    ) -> Result<Var> {
        let ws = self.value(weight).shape().to_vec();
        let [_, _, kh, kw] = ws[..] else {
            return Err(Error::shape(format!(
                "conv2d weight must be rank 4, got {ws:?}"
            )));
        };
        if allowed.len() != kh * kw {
            return Err(Error::shape(format!(
                "mask has {} taps, kernel has {}",
                allowed.len(),
                kh * kw
            )));
        }
        let taps = (0..kh)
            .flat_map(|y| (0..kw).map(move |x| (y, x)))
            .filter(|&(y, x)| allowed[y * kw + x])
            .collect();
        self.conv2d_taps(input, weight, bias, padding, taps)
    }

    fn conv2d_taps(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        padding: usize,
        taps: Vec<(usize, usize)>,
    ) -> Result<Var> {
        let g = ConvGeom::new(self.value(input).shape(), self.value(weight).shape(), padding)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [g.c_out] {
                return Err(Error::shape(format!(
                    "conv2d bias must have shape [{}], got {:?}",
                    g.c_out,
                    self.value(b).shape()
                )));
            }
        }
        let p = g.positions();
        let cols_n = g.batch * p;
        let mut out_cm = vec![T::zero(); g.c_out * cols_n];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for co in 0..g.c_out {
                out_cm[co * cols_n..][..cols_n].fill(bv[co]);
            }
        }
        if !taps.is_empty() {
            let wmat = g.gather_weight(self.value(weight).data(), &taps);
            let k = g.c_in * taps.len();
            if g.is_pointwise(&taps) {
                let x = self.value(input).data();
                gemm(Mat::new(&wmat, g.c_out, k), Mat::new(x, k, cols_n), &mut out_cm, T::one());
            } else {
                let cols = g.im2col(self.value(input).data(), &taps);
                gemm(Mat::new(&wmat, g.c_out, k), Mat::new(&cols, k, cols_n), &mut out_cm, T::one());
            }
        }
        let out = if g.batch == 1 {
            out_cm
        } else {
            g.unfold_channels(&out_cm, g.c_out)
        };
        let value = Tensor::from_vec(&g.out_shape(), out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
                taps,
            },
            "conv2d",
        )
    }

    // ----------------------------------------------------------- elementwise

    /// Dispatches one of the element-wise ops; `b` is required for the binary ones.
    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = || b.ok_or_else(|| Error::InvalidArgument(format!("{op:?} needs two operands")));
        match op {
            Elementwise::Add => self.add(a, need_b()?),
            Elementwise::Sub => self.sub(a, need_b()?),
            Elementwise::Mul => self.mul(a, need_b()?),
            Elementwise::Div => self.div(a, need_b()?),
            Elementwise::Square => self.square(a),
            Elementwise::Sqrt => self.sqrt(a),
            Elementwise::Abs => self.abs(a),
            Elementwise::Ln => self.ln(a),
            Elementwise::LeakyRelu(s) => self.leaky_relu(a, T::from_f64_lossy(s)),
            Elementwise::ClampMin(c) => self.clamp_min(a, T::from_f64_lossy(c)),
        }
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = broadcast_shape(av.shape(), bv.shape())?;
        let mut out = vec![T::zero(); shape.iter().product()];
        let (ad, bd) = (av.data(), bv.data());
        if kind == Binary::Div && bd.iter().any(|v| *v == T::zero()) {
            return Err(Error::Domain("division by zero".into()));
        }
        let f: fn(T, T) -> T = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
        };
        for_each_broadcast(av.shape(), bv.shape(), &shape, |o, i, j| out[o] = f(ad[i], bd[j]));
        let value = Tensor::from_vec(&shape, out)?;
        self.push(value, Op::Binary(kind, a, b), "binary op")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, a: Var, op: Op<T>, name: &str, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(value, op, name)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), "square", |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|v| *v < T::zero()) {
            return Err(Error::Domain("sqrt of negative value".into()));
        }
        self.unary(a, Op::Sqrt(a), "sqrt", |x| x.sqrt())
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), "abs", |x| x.abs())
    }

    /// Natural logarithm.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|v| *v <= T::zero()) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        self.unary(a, Op::Ln(a), "ln", |x| x.ln())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        self.unary(a, Op::LeakyRelu(a, slope), "leaky_relu", |x| {
            if x >= T::zero() {
                x
            } else {
                x * slope
            }
        })
    }

    /// `max(a, c)`; zero gradient where clamped.
    pub fn clamp_min(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, Op::ClampMin(a, c), "clamp_min", |x| if x < c { c } else { x })
    }

    /// `min(max(a, lo), hi)`; zero gradient where clamped.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        self.unary(a, Op::Clamp(a, lo, hi), "clamp", |x| x.max(lo).min(hi))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), "scale", |x| x * c)
    }

    /// Addition of a constant.
    pub fn offset(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, Op::Offset(a), "offset", |x| x + c)
    }

    // ----------------------------------------------------------------- reduce

    pub fn reduce(&mut self, op: Reduce, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape(format!("{op:?} of an empty tensor")));
        }
        let s: T = self.value(a).data().iter().copied().sum();
        match op {
            Reduce::Sum => self.push(Tensor::scalar(s), Op::Sum(a), "sum"),
            Reduce::Mean => {
                let m = s / T::from_usize(n).unwrap();
                self.push(Tensor::scalar(m), Op::Mean(a), "mean")
            }
        }
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Sum, a)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Mean, a)
    }

    // ----------------------------------------------------------------- shape

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(format!(
                "narrow axis {axis} [{start}, {}) out of {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::from_vec(&new_shape, out)?;
        self.push(value, Op::Narrow { input: a, axis, start }, "narrow")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push(value, Op::Reshape(a), "reshape")
    }

    // ------------------------------------------------------------- likelihood

    /// Probability mass of the unit-width bin centred on each `v` under
    /// `N(mu, sigma^2)`: `Phi((v + 1/2 - mu)/sigma) - Phi((v - 1/2 - mu)/sigma)`.
    ///
    /// Evaluated on `|v - mu|` so both CDF arguments sit in the lower tail,
    /// where the difference does not cancel.
    pub fn gaussian_likelihood(&mut self, v: Var, mu: Var, sigma: Var) -> Result<Var> {
        let shape = self.value(v).shape().to_vec();
        if self.value(mu).shape() != shape.as_slice() || self.value(sigma).shape() != shape.as_slice() {
            return Err(Error::shape(format!(
                "likelihood operands differ: {:?}, {:?}, {:?}",
                shape,
                self.value(mu).shape(),
                self.value(sigma).shape()
            )));
        }
        if self.value(sigma).data().iter().any(|s| *s <= T::zero()) {
            return Err(Error::Domain("non-positive scale".into()));
        }
        let half = T::from_f64_lossy(0.5);
        let out: Vec<T> = self
            .value(v)
            .data()
            .iter()
            .zip(self.value(mu).data())
            .zip(self.value(sigma).data())
            .map(|((&x, &m), &s)| {
                let d = (x - m).abs();
                normal_cdf((half - d) / s) - normal_cdf((-half - d) / s)
            })
            .collect();
        let value = Tensor::from_vec(&shape, out)?;
        self.push(value, Op::GaussianLikelihood { v, mu, sigma }, "gaussian_likelihood")
    }

    // --------------------------------------------------------------- backward

    /// Accumulates d`loss`/d`node` into every reachable node that requires a
    /// gradient. Calling it again without [`Graph::zero_grad`] adds another
    /// full gradient on top of the existing one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &gout, &mut grads)?;
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(g) => g.data_mut().iter_mut().zip(&gout).for_each(|(a, b)| *a += *b),
                None => node.grad = Some(Tensor::from_vec(node.value.shape(), gout)?),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
                taps,
            } => {
                let g = ConvGeom::new(self.value(*input).shape(), self.value(*weight).shape(), *padding)?;
                let p = g.positions();
                let cols_n = g.batch * p;
                let gcm = if g.batch == 1 {
                    gout.to_vec()
                } else {
                    g.fold_channels(gout, g.c_out)
                };
                if let Some(b) = bias {
                    acc(*b, &mut |gb| {
                        for co in 0..g.c_out {
                            gb[co] += gcm[co * cols_n..][..cols_n].iter().copied().sum::<T>();
                        }
                    });
                }
                if taps.is_empty() {
                    return Ok(());
                }
                let k = g.c_in * taps.len();
                let pointwise = g.is_pointwise(taps);
                let cols_owned;
                let cols: &[T] = if pointwise {
                    val(*input)
                } else {
                    cols_owned = g.im2col(val(*input), taps);
                    &cols_owned
                };
                acc(*weight, &mut |gw| {
                    let mut gmat = vec![T::zero(); g.c_out * k];
                    gemm(Mat::new(&gcm, g.c_out, cols_n), Mat::t(cols, k, cols_n), &mut gmat, T::zero());
                    g.scatter_weight_grad(&gmat, taps, gw);
                });
                acc(*input, &mut |gx| {
                    let wmat = g.gather_weight(val(*weight), taps);
                    if pointwise {
                        gemm(Mat::t(&wmat, g.c_out, k), Mat::new(&gcm, g.c_out, cols_n), gx, T::one());
                    } else {
                        let mut gcols = vec![T::zero(); k * cols_n];
                        gemm(Mat::t(&wmat, g.c_out, k), Mat::new(&gcm, g.c_out, cols_n), &mut gcols, T::zero());
                        g.col2im_add(&gcols, taps, gx);
                    }
                });
            }
            Op::Binary(kind, a, b) => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let shape = node.value.shape();
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for_each_broadcast(sa, sb, shape, |o, i, j| {
                        ga[i] += match kind {
                            Binary::Add | Binary::Sub => gout[o],
                            Binary::Mul => gout[o] * bd[j],
                            Binary::Div => gout[o] / bd[j],
                        }
                    })
                });
                acc(*b, &mut |gb| {
                    for_each_broadcast(sa, sb, shape, |o, i, j| {
                        gb[j] += match kind {
                            Binary::Add => gout[o],
                            Binary::Sub => -gout[o],
                            Binary::Mul => gout[o] * ad[i],
                            Binary::Div => -gout[o] * ad[i] / (bd[j] * bd[j]),
                        }
                    })
                });
            }
            Op::Square(a) => {
                let x = val(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * (x[i] + x[i]);
                    }
                });
            }
            Op::Sqrt(a) => acc(*a, &mut |g| {
                let two = T::one() + T::one();
                for i in 0..g.len() {
                    if out[i] > T::zero() {
                        g[i] += gout[i] / (two * out[i]);
                    }
                }
            }),
            Op::Abs(a) => {
                let x = val(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        if x[i] > T::zero() {
                            g[i] += gout[i];
                        } else if x[i] < T::zero() {
                            g[i] -= gout[i];
                        }
                    }
                });
            }
            Op::Ln(a) => {
                let x = val(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] / x[i];
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += if x[i] >= T::zero() { gout[i] } else { gout[i] * *slope };
                    }
                });
            }
            Op::ClampMin(a, c) => {
                let x = val(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        if x[i] >= *c {
                            g[i] += gout[i];
                        }
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        if x[i] >= *lo && x[i] <= *hi {
                            g[i] += gout[i];
                        }
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |g| {
                for i in 0..g.len() {
                    g[i] += gout[i] * *c;
                }
            }),
            Op::Offset(a) | Op::Reshape(a) => acc(*a, &mut |g| {
                for i in 0..g.len() {
                    g[i] += gout[i];
                }
            }),
            Op::Sum(a) => acc(*a, &mut |g| g.iter_mut().for_each(|v| *v += gout[0])),
            Op::Mean(a) => acc(*a, &mut |g| {
                let d = gout[0] / T::from_usize(g.len()).unwrap();
                g.iter_mut().for_each(|v| *v += d)
            }),
            Op::Narrow { input, axis, start } => {
                let shape = self.value(*input).shape();
                let len = node.value.shape()[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                acc(*input, &mut |g| {
                    for o in 0..outer {
                        let base = (o * shape[*axis] + start) * inner;
                        let src = &gout[o * len * inner..][..len * inner];
                        g[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, b)| *a += *b);
                    }
                });
            }
            Op::GaussianLikelihood { v, mu, sigma } => {
                let half = T::from_f64_lossy(0.5);
                let (x, m, s) = (val(*v), val(*mu), val(*sigma));
                // d/dv, d/dmu, d/dsigma of Phi(a) - Phi(b), a = (v+1/2-mu)/s, b = (v-1/2-mu)/s
                let n = gout.len();
                let mut dv = vec![T::zero(); n];
                let mut ds = vec![T::zero(); n];
                for i in 0..n {
                    let a = (x[i] + half - m[i]) / s[i];
                    let b = (x[i] - half - m[i]) / s[i];
                    let (pa, pb) = (normal_pdf(a), normal_pdf(b));
                    dv[i] = gout[i] * (pa - pb) / s[i];
                    ds[i] = -gout[i] * (a * pa - b * pb) / s[i];
                }
                acc(*v, &mut |g| g.iter_mut().zip(&dv).for_each(|(a, b)| *a += *b));
                acc(*mu, &mut |g| g.iter_mut().zip(&dv).for_each(|(a, b)| *a -= *b));
                acc(*sigma, &mut |g| g.iter_mut().zip(&ds).for_each(|(a, b)| *a += *b));
            }
        }
        Ok(())
    }
}

/// Result of comparing autodiff gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (parameter index, element index) of the worst relative error.
    pub worst: (usize, usize),
    /// Per parameter tensor, `|analytic - numeric| / max(|analytic|, |numeric|)`
    /// with Euclidean norms over the tensor (zero when both vanish).
    pub group_rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_group_rel_error(&self) -> f64 {
        self.group_rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Denominator floor of [`grad_check`]'s relative error. Elements whose true
/// gradient is below it are effectively held to an absolute tolerance, since
/// a central difference cannot resolve them relative to the loss magnitude.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Checks `f`'s autodiff gradient w.r.t. each of `params` against central
/// finite differences with step `eps`. `f` must be deterministic.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
{
    grad_check_report(f, params, eps, GRAD_CHECK_FLOOR).map(|r| r.max_rel_error)
}

pub fn grad_check_report<F>(f: F, params: &[Tensor<f64>], eps: f64, floor: f64) -> Result<GradCheck>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        g.value(loss).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        group_rel_errors: Vec::with_capacity(params.len()),
    };
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = g
            .grad(*var)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; params[pi].len()]);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for (ei, &a) in analytic.iter().enumerate() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let abs = (a - numeric).abs();
            diff2 += abs * abs;
            a2 += a * a;
            n2 += numeric * numeric;
            let rel = abs / a.abs().max(numeric.abs()).max(floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, ei);
            }
        }
        let scale = a2.max(n2).sqrt();
        report
            .group_rel_errors
            .push(if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    /// Same magnitude draws with random signs, bounded away from zero.
    fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mag = random(shape, seed, 0.2, 2.0);
        let data = mag.data().iter().map(|&v| if rng.gen_bool(0.5) { v } else { -v }).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Direct-summation cross-correlation over `C x H x W` with zero padding.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, pad: usize) -> Tensor<f64> {
        let [ci, h, wd] = x.shape()[..] else { panic!() };
        let [co, _, kh, kw] = w.shape()[..] else { panic!() };
        let (oh, ow) = (h + 2 * pad + 1 - kh, wd + 2 * pad + 1 - kw);
        let mut out = vec![0.0; co * oh * ow];
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = b.data()[o];
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let (iy, ix) = ((y + ky) as isize - pad as isize, (xx + kx) as isize - pad as isize);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                s += w.data()[((o * ci + c) * kh + ky) * kw + kx]
                                    * x.data()[(c * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out[(o * oh + y) * ow + xx] = s;
                }
            }
        }
        Tensor::from_vec(&[co, oh, ow], out).unwrap()
    }

    #[test]
    fn conv_matches_direct_summation() {
        let cases = [(4, 3, 3, 2, 3, 1), (8, 8, 8, 5, 3, 1), (3, 6, 5, 4, 1, 0), (2, 7, 4, 3, 3, 0), (5, 4, 6, 2, 5, 2)];
        for (i, &(ci, h, w, co, k, pad)) in cases.iter().enumerate() {
            let x = random(&[ci, h, w], 10 + i as u64, -1.0, 1.0);
            let wt = random(&[co, ci, k, k], 20 + i as u64, -1.0, 1.0);
            let b = random(&[co], 30 + i as u64, -1.0, 1.0);
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(b.clone()));
            let y = g.conv2d(xv, wv, Some(bv), pad).unwrap();
            let want = naive_conv(&x, &wt, &b, pad);
            assert!(g.value(y).max_abs_diff(&want).unwrap() < 1e-12, "case {i}");
        }
    }

    #[test]
    fn batched_conv_equals_per_item_conv() {
        let x = random(&[3, 4, 5, 5], 1, -1.0, 1.0);
        let wt = random(&[2, 4, 3, 3], 2, -1.0, 1.0);
        let b = random(&[2], 3, -1.0, 1.0);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, Some(bv), 1).unwrap();
        let items = g.value(y).unstack();
        for (n, item) in x.unstack().iter().enumerate() {
            assert!(items[n].max_abs_diff(&naive_conv(item, &wt, &b, 1)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn conv_identity_and_bias_only() {
        let x = random(&[3, 4, 4], 4, -1.0, 1.0);
        let mut eye = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            eye.data_mut()[c * 3 + c] = 1.0;
        }
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(eye));
        let zero_b = g.constant(Tensor::zeros(&[3]));
        let y = g.conv2d(xv, wv, Some(zero_b), 0).unwrap();
        assert_eq!(g.value(y), &x);

        let z = g.constant(Tensor::zeros(&[2, 3, 3]));
        let w = g.constant(random(&[4, 2, 3, 3], 5, -1.0, 1.0));
        let b = g.constant(Tensor::from_vec(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let y = g.conv2d(z, w, Some(b), 1).unwrap();
        for c in 0..4 {
            assert!(g.value(y).data()[c * 9..][..9].iter().all(|v| *v == [1.0, -2.0, 0.5, 3.0][c]));
        }
    }

    #[test]
    fn conv_shape_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[3, 4, 4]));
        let w = g.constant(Tensor::zeros(&[2, 2, 3, 3]));
        assert!(g.conv2d(x, w, None, 1).is_err());
        let w = g.constant(Tensor::zeros(&[2, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(g.conv2d(x, w, Some(b), 1).is_err());
        let w = g.constant(Tensor::zeros(&[2, 3, 3]));
        assert!(g.conv2d(x, w, None, 1).is_err());
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_vec(&[3], vec![-2.0, 0.01, 4.0]).unwrap());
        let l = g.elementwise(Elementwise::LeakyRelu(0.01), a, None).unwrap();
        assert!((g.value(l).data()[0] + 0.02).abs() < 1e-15);
        let c = g.elementwise(Elementwise::ClampMin(0.04), a, None).unwrap();
        assert_eq!(g.value(c).data(), &[0.04, 0.04, 4.0]);
        let zero = g.constant(Tensor::from_vec(&[3], vec![1.0, 0.0, 2.0]).unwrap());
        assert!(matches!(g.div(a, zero), Err(Error::Domain(_))));
        assert!(matches!(g.sqrt(a), Err(Error::Domain(_))));
        assert!(g.elementwise(Elementwise::Add, a, None).is_err());
        let m = g.constant(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let mean = g.mean(m).unwrap();
        assert_eq!(g.value(mean).item().unwrap(), 2.0);
        let empty = g.constant(Tensor::zeros(&[0]));
        assert!(g.sum(empty).is_err());
        let wrong = g.constant(Tensor::zeros(&[2]));
        assert!(g.add(a, wrong).is_err());
    }

    #[test]
    fn clamped_points_get_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_vec(&[3], vec![0.01, 0.5, -3.0]).unwrap());
        let c = g.clamp_min(a, 0.04).unwrap();
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn backward_basics() {
        let mut g = Graph::<f64>::new();
        let x = g.param(random(&[2, 3, 4], 1, -1.0, 1.0));
        let y = g.param(random(&[2, 3, 4], 2, -1.0, 1.0));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|v| *v == 1.0));
        g.zero_grad();
        let xy = g.mul(x, y).unwrap();
        let s = g.sum(xy).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), g.value(y));
        // a second call accumulates
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &g.value(y).map(|v| 2.0 * v));
        assert!(g.backward(xy).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::ones(&[2]));
        let p = g.param(Tensor::ones(&[2]));
        let s = g.add(c, p).unwrap();
        let l = g.sum(s).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(c).is_none());
        assert!(g.grad(p).is_some());
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::full(&[2], 1e30));
        assert!(matches!(g.square(a), Err(Error::NonFinite(_))));
    }

    fn weighted_sum<'g>(g: &mut Graph<'g, f64>, y: Var, seed: u64) -> Result<Var> {
        let w = g.constant(random(g.value(y).shape(), seed, -1.0, 1.0));
        let p = g.mul(y, w)?;
        g.sum(p)
    }

    fn check(name: &str, params: Vec<Tensor<f64>>, f: impl for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>) {
        let err = grad_check(f, &params, 1e-6).unwrap();
        assert!(err < 1e-5, "{name}: {err}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let s = [2, 3, 2];
        check("conv2d", vec![random(&[3, 4, 4], 1, -1.0, 1.0), random(&[2, 3, 3, 3], 2, -1.0, 1.0), random(&[2], 3, -1.0, 1.0)], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1)?;
            weighted_sum(g, y, 9)
        });
        check("conv2d batched", vec![random(&[2, 3, 3, 4], 1, -1.0, 1.0), random(&[2, 3, 1, 1], 2, -1.0, 1.0)], |g, v| {
            let y = g.conv2d(v[0], v[1], None, 0)?;
            weighted_sum(g, y, 9)
        });
        check("conv2d masked", vec![random(&[3, 4, 4], 4, -1.0, 1.0), random(&[2, 3, 3, 3], 5, -1.0, 1.0)], |g, v| {
            let allowed = [true, true, true, true, false, false, false, false, false];
            let y = g.conv2d_masked(v[0], v[1], None, 1, &allowed)?;
            weighted_sum(g, y, 9)
        });
        for (i, op) in [Elementwise::Add, Elementwise::Sub, Elementwise::Mul, Elementwise::Div].into_iter().enumerate() {
            check(&format!("{op:?}"), vec![random(&s, 6 + i as u64, -1.0, 1.0), random(&s, 7, 0.5, 2.0)], move |g, v| {
                let y = g.elementwise(op, v[0], Some(v[1]))?;
                weighted_sum(g, y, 9)
            });
            check(&format!("{op:?} broadcast"), vec![random(&s, 6, -1.0, 1.0), random(&[2, 1, 1], 7, 0.5, 2.0)], move |g, v| {
                let y = g.elementwise(op, v[0], Some(v[1]))?;
                weighted_sum(g, y, 9)
            });
        }
        let unary: [(Elementwise, Tensor<f64>); 6] = [
            (Elementwise::Square, random(&s, 8, -2.0, 2.0)),
            (Elementwise::Sqrt, random(&s, 8, 0.3, 2.0)),
            (Elementwise::Abs, away_from_zero(&s, 8)),
            (Elementwise::Ln, random(&s, 8, 0.3, 2.0)),
            (Elementwise::LeakyRelu(0.01), away_from_zero(&s, 9)),
            (Elementwise::ClampMin(0.1), away_from_zero(&s, 10)),
        ];
        for (op, x) in unary {
            check(&format!("{op:?}"), vec![x], move |g, v| {
                let y = g.elementwise(op, v[0], None)?;
                weighted_sum(g, y, 9)
            });
        }
        check("clamp", vec![away_from_zero(&s, 11)], |g, v| {
            let y = g.clamp(v[0], -0.1, 1.0)?;
            weighted_sum(g, y, 9)
        });
        check("scale+offset", vec![random(&s, 12, -1.0, 1.0)], |g, v| {
            let y = g.scale(v[0], -1.7)?;
            let y = g.offset(y, 0.3)?;
            weighted_sum(g, y, 9)
        });
        check("mean", vec![random(&s, 13, -1.0, 1.0)], |g, v| {
            let sq = g.square(v[0])?;
            g.mean(sq)
        });
        check("narrow+reshape", vec![random(&[2, 4, 3], 14, -1.0, 1.0)], |g, v| {
            let n = g.narrow(v[0], 1, 1, 2)?;
            let r = g.reshape(n, &[12])?;
            weighted_sum(g, r, 9)
        });
        check(
            "gaussian likelihood",
            vec![random(&s, 15, -3.0, 3.0), random(&s, 16, -1.0, 1.0), random(&s, 17, 0.3, 2.0)],
            |g, v| {
                let p = g.gaussian_likelihood(v[0], v[1], v[2])?;
                let l = g.ln(p)?;
                weighted_sum(g, l, 9)
            },
        );
    }

    #[test]
    fn square_sum_gradient_is_two_x() {
        let x = random(&[5], 3, -2.0, 2.0);
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let sq = g.square(v).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(v).unwrap(), &x.map(|a| 2.0 * a));
        let err = grad_check(
            |g, v| {
                let sq = g.square(v[0])?;
                g.sum(sq)
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn linear_function_is_exact() {
        // central differences of a linear function are exact at any step, and a
        // wide step keeps roundoff in the loss value from being amplified
        let err = grad_check(|g, v| weighted_sum(g, v[0], 1), &[random(&[4, 3], 2, -1.0, 1.0)], 0.5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn node_with_two_consumers_sums_both_paths() {
        let err = grad_check(
            |g, v| {
                let a = g.square(v[0])?;
                let b = g.scale(v[0], 3.0)?;
                let c = g.mul(a, v[0])?;
                let d = g.add(b, c)?;
                weighted_sum(g, d, 4)
            },
            &[random(&[6], 5, -1.0, 1.0)],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn three_layer_composite() {
        let params = vec![
            random(&[3, 2, 3, 3], 1, -0.5, 0.5),
            random(&[3], 2, -0.1, 0.1),
            random(&[4, 3, 1, 1], 3, -0.5, 0.5),
            random(&[2, 4, 3, 3], 4, -0.5, 0.5),
            random(&[2], 5, -0.1, 0.1),
        ];
        let x = random(&[2, 5, 5], 6, -1.0, 1.0);
        let err = grad_check(
            move |g, v| {
                let xv = g.constant(x.clone());
                let h = g.conv2d(xv, v[0], Some(v[1]), 1)?;
                let h = g.leaky_relu(h, 0.01)?;
                let h = g.conv2d(h, v[2], None, 0)?;
                let h = g.square(h)?;
                let h = g.offset(h, 1.0)?;
                let h = g.sqrt(h)?;
                let h = g.conv2d_masked(h, v[3], Some(v[4]), 1, &[true, true, true, true, true, false, false, false, false])?;
                weighted_sum(g, h, 7)
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn masked_taps_have_structurally_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(random(&[2, 4, 4], 1, -1.0, 1.0));
        let w = g.param(random(&[3, 2, 3, 3], 2, -1.0, 1.0));
        let allowed = [true, true, true, true, false, false, false, false, false];
        let y = g.conv2d_masked(x, w, None, 1, &allowed).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        for (i, v) in g.grad(w).unwrap().data().iter().enumerate() {
            assert_eq!(*v == 0.0, !allowed[i % 9], "tap {i}");
        }
    }
}
