//! Tape of recorded operations and reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node, so node ids are
//! already in topological order. Leaves created with `requires_grad = false`
//! act as constants: gradients flow *through* the activations they produce
//! but are never accumulated *into* them.

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeometry, InterpMode, Resampler1d};
use crate::macs::{MacCounter, OpKind};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::{ensure_same_shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Exp(Var),
    Silu(Var),
    SmoothAbs(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SliceChannels {
        x: Var,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    RepeatChannels {
        x: Var,
        times: usize,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    PixelUnshuffle {
        x: Var,
        r: usize,
    },
    Interp {
        x: Var,
        planes: usize,
        ry: Box<Resampler1d>,
        rx: Box<Resampler1d>,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    GaussianKl {
        mean: Var,
        logvar: Var,
    },
    Diff {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    PadReplicate {
        x: Var,
        pad: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    macs: MacCounter,
    bytes: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            macs: MacCounter::new(),
            bytes: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// MACs of every operation recorded so far.
    pub fn macs(&self) -> &MacCounter {
        &self.macs
    }

    /// Bytes held by all recorded values; the tape keeps every activation
    /// alive, so this is also the peak.
    pub fn activation_bytes(&self) -> usize {
        self.bytes
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.bytes += value.size_bytes();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Constant copy of `v`'s current value, cut from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ops::conv_geometry(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::new([geom.c_out, geom.h_out, geom.w_out], out)?;
        self.macs.record(OpKind::Conv2d, geom.macs());
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        self.value(a).zip_map(self.value(b), op, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        self.macs.record(OpKind::Elementwise, v.numel() as u64);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    fn unary(&mut self, x: Var, op: Op, macs_per_elem: u64, f: impl Fn(T) -> T) -> Var {
        let v = self.value(x).map(f);
        self.macs
            .record(OpKind::Elementwise, macs_per_elem * v.numel() as u64);
        let rg = self.any_grad(&[x]);
        self.push(v, op, rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let st = T::of(s);
        self.unary(x, Op::Scale(x, s), 1, |v| v * st)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let ct = T::of(c);
        self.unary(x, Op::AddScalar(x), 0, |v| v + ct)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), 1, |v| v * v)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), 0, |v| v.exp())
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Silu(x), 1, |v| v / (T::one() + (-v).exp()))
    }

    /// `sqrt(x² + eps²) − eps`: differentiable |x| that is exactly zero at zero.
    pub fn smooth_abs(&mut self, x: Var, eps: f64) -> Var {
        let e = T::of(eps);
        self.unary(x, Op::SmoothAbs(x, eps), 1, |v| (v * v + e * e).sqrt() - e)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::of(lo), T::of(hi));
        self.unary(x, Op::Clamp(x, lo, hi), 0, |v| v.max(l).min(h))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        let rg = self.any_grad(&[x]);
        self.push(v, Op::Mean(x), rg)
    }

    /// Sum of several same-shaped terms.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| TensorError::Contract("add_all of zero terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice_channels(start, len)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(v, Op::SliceChannels { x, start, len }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    pub fn repeat_channels(&mut self, x: Var, times: usize) -> Result<Var> {
        let v = ops::repeat_channels(self.value(x), times)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(v, Op::RepeatChannels { x, times }, rg))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let v = ops::pixel_shuffle(self.value(x), r)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(v, Op::PixelShuffle { x, r }, rg))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let v = ops::pixel_unshuffle(self.value(x), r)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(v, Op::PixelUnshuffle { x, r }, rg))
    }

    pub fn interpolate_upsample(&mut self, x: Var, r: usize, mode: InterpMode) -> Result<Var> {
        let (planes, h, w) = ops::resamplers(self.shape(x), r)?;
        let ry = Resampler1d::new(h, r, mode);
        let rx = Resampler1d::new(w, r, mode);
        let out = kernels::resample_forward(self.value(x).data(), planes, &ry, &rx);
        let mut shape = self.shape(x).to_vec();
        let n = shape.len();
        shape[n - 2] = h * r;
        shape[n - 1] = w * r;
        let value = Tensor::new(shape, out)?;
        if mode != InterpMode::Nearest {
            let taps = mode.taps() as u64;
            let macs = planes as u64 * (h * w * r) as u64 * taps
                + planes as u64 * (h * w * r * r) as u64 * taps;
            self.macs.record(OpKind::Interpolate, macs);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::Interp {
                x,
                planes,
                ry: Box::new(ry),
                rx: Box::new(rx),
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        let (m, k, n) = (self.shape(a)[0], self.shape(a)[1], self.shape(b)[1]);
        self.macs.record(OpKind::MatMul, (m * k * n) as u64);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// KL of `N(mean, exp(logvar))` from the standard normal, summed to a scalar.
    pub fn gaussian_kl(&mut self, mean: Var, logvar: Var) -> Result<Var> {
        let kl = ops::gaussian_kl(self.value(mean), self.value(logvar))?;
        self.macs
            .record(OpKind::Elementwise, self.value(mean).numel() as u64);
        let rg = self.any_grad(&[mean, logvar]);
        Ok(self.push(Tensor::scalar(kl), Op::GaussianKl { mean, logvar }, rg))
    }

    /// Forward difference `x[.., i+1, ..] − x[.., i, ..]` along `axis`.
    pub fn diff(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] < 2 {
            return Err(TensorError::Config {
                op: "diff",
                msg: format!("axis {axis} of shape {shape:?} has fewer than 2 entries"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (len - 1) * inner);
        for o in 0..outer {
            for i in 0..len - 1 {
                let a = &src[(o * len + i) * inner..][..inner];
                let b = &src[(o * len + i + 1) * inner..][..inner];
                out.extend(a.iter().zip(b).map(|(&p, &q)| q - p));
            }
        }
        let mut out_shape = shape;
        out_shape[axis] -= 1;
        let value = Tensor::new(out_shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::Diff {
                x,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Edge-replicate padding of a `[C, H, W]` tensor by `pad` on each side.
    pub fn pad_replicate(&mut self, x: Var, pad: usize) -> Result<Var> {
        let value = ops::pad_replicate(self.value(x), pad)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::PadReplicate { x, pad }, rg))
    }

    /// Gradient of the scalar `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_retaining(loss, &[])
    }

    /// As [`backward`](Self::backward), also keeping gradients of the
    /// intermediate nodes in `retain`.
    pub fn backward_retaining(&self, loss: Var, retain: &[Var]) -> Result<Gradients<T>> {
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_from(
            loss,
            Tensor::full(self.shape(loss).to_vec(), T::one()),
            retain,
        )
    }

    /// Vector-Jacobian product: propagates `seed` (the gradient of some
    /// downstream objective with respect to `out`) back through the tape.
    pub fn backward_from(&self, out: Var, seed: Tensor<T>, retain: &[Var]) -> Result<Gradients<T>> {
        ensure_same_shape("backward_from", self.shape(out), seed.shape())?;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        let mut keep = vec![false; self.nodes.len()];
        for v in retain {
            keep[v.0] = true;
        }
        if self.nodes[out.0].requires_grad {
            grads[out.0] = Some(seed.into_data());
        }
        for i in (0..=out.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &dy, &mut grads);
            if matches!(node.op, Op::Leaf) || keep[i] {
                grads[i] = Some(dy);
            }
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.map(|d| Tensor::new(node.value.shape().to_vec(), d).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mapped = |v: Var, f: &dyn Fn(T, T) -> T| -> Vec<T> {
            val(v).iter().zip(dy).map(|(&x, &g)| f(x, g)).collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let g = kernels::conv2d_backward(val(*x), val(*w), dy, geom, need);
                if let Some(dx) = g.input {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = g.weight {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, g.bias) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.to_vec());
                self.accumulate(grads, *b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.to_vec());
                if self.rg(*b) {
                    self.accumulate(grads, *b, dy.iter().map(|&g| -g).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, mapped(*b, &|y, g| y * g));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, mapped(*a, &|x, g| x * g));
                }
            }
            Op::Scale(x, s) => {
                let s = T::of(*s);
                self.accumulate(grads, *x, dy.iter().map(|&g| g * s).collect());
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, dy.to_vec()),
            Op::Square(x) => {
                let two = T::of(2.0);
                self.accumulate(grads, *x, mapped(*x, &|v, g| two * v * g));
            }
            Op::Exp(x) => {
                let y = node.value.data();
                self.accumulate(grads, *x, y.iter().zip(dy).map(|(&y, &g)| y * g).collect());
            }
            Op::Silu(x) => {
                self.accumulate(
                    grads,
                    *x,
                    mapped(*x, &|v, g| {
                        let s = T::one() / (T::one() + (-v).exp());
                        g * s * (T::one() + v * (T::one() - s))
                    }),
                );
            }
            Op::SmoothAbs(x, eps) => {
                let e2 = T::of(eps * eps);
                self.accumulate(grads, *x, mapped(*x, &|v, g| g * v / (v * v + e2).sqrt()));
            }
            Op::Clamp(x, lo, hi) => {
                let (l, h) = (T::of(*lo), T::of(*hi));
                self.accumulate(
                    grads,
                    *x,
                    mapped(*x, &|v, g| if v >= l && v <= h { g } else { T::zero() }),
                );
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(grads, *x, vec![dy[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(grads, *x, vec![dy[0] / T::of(n as f64); n]);
            }
            Op::SliceChannels { x, start, len } => {
                let src = &self.nodes[x.0].value;
                let plane = src.numel() / src.shape()[0].max(1);
                let mut dx = vec![T::zero(); src.numel()];
                dx[start * plane..(start + len) * plane].copy_from_slice(dy);
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, dy.to_vec()),
            Op::RepeatChannels { x, times } => {
                let src = &self.nodes[x.0].value;
                let plane = src.numel() / src.shape()[0].max(1);
                let mut dx = vec![T::zero(); src.numel()];
                for (c, out) in dx.chunks_mut(plane.max(1)).enumerate() {
                    for j in 0..*times {
                        let g = &dy[(c * times + j) * plane..][..plane];
                        for (o, &gv) in out.iter_mut().zip(g) {
                            *o = *o + gv;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::PixelShuffle { x, r } => {
                let [c, h, w] = *node.value.shape() else {
                    unreachable!()
                };
                self.accumulate(grads, *x, kernels::pixel_unshuffle(dy, c, h / r, w / r, *r));
            }
            Op::PixelUnshuffle { x, r } => {
                let [c, h, w] = *node.value.shape() else {
                    unreachable!()
                };
                self.accumulate(grads, *x, kernels::pixel_shuffle(dy, c / (r * r), h, w, *r));
            }
            Op::Interp { x, planes, ry, rx } => {
                self.accumulate(grads, *x, kernels::resample_adjoint(dy, *planes, ry, rx));
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    // dA = dY · Bᵀ
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        dy,
                        (n as isize, 1),
                        val(*b),
                        (1, n as isize),
                        T::zero(),
                        &mut da,
                        (k as isize, 1),
                    );
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    // dB = Aᵀ · dY
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        val(*a),
                        (1, k as isize),
                        dy,
                        (n as isize, 1),
                        T::zero(),
                        &mut db,
                        (n as isize, 1),
                    );
                    self.accumulate(grads, *b, db);
                }
            }
            Op::GaussianKl { mean, logvar } => {
                let g = dy[0];
                if self.rg(*mean) {
                    self.accumulate(grads, *mean, val(*mean).iter().map(|&m| g * m).collect());
                }
                if self.rg(*logvar) {
                    let half = T::of(0.5);
                    self.accumulate(
                        grads,
                        *logvar,
                        val(*logvar)
                            .iter()
                            .map(|&lv| g * half * (lv.exp() - T::one()))
                            .collect(),
                    );
                }
            }
            Op::Diff {
                x,
                outer,
                len,
                inner,
            } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let mut dx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for i in 0..len - 1 {
                        let g = &dy[(o * (len - 1) + i) * inner..][..inner];
                        for (j, &gv) in g.iter().enumerate() {
                            let lo = (o * len + i) * inner + j;
                            dx[lo] = dx[lo] - gv;
                            dx[lo + inner] = dx[lo + inner] + gv;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::PadReplicate { x, pad } => {
                let [c, h, w] = *self.nodes[x.0].value.shape() else {
                    unreachable!()
                };
                self.accumulate(grads, *x, kernels::pad_replicate_adjoint(dy, c, h, w, *pad));
            }
        }
    }
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when no gradient reached `v` (constant leaf, or unreachable).
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Gradient of `v`, or zeros shaped like it when none flowed.
    pub fn wrt(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v).to_vec()))
    }
}

/// MACs recorded by `graph` (see [`MacCounter`] for the counting convention).
pub fn count_macs<T: Scalar>(graph: &Graph<T>) -> MacCounter {
    graph.macs().clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn sum_of_squares_grad_is_2x() {
        let mut rng = Rng::new(5);
        let x0 = Tensor::<f64>::randn([3, 4], &mut rng);
        let mut g = Graph::new();
        let x = g.variable(x0.clone());
        let sq = g.square(x);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        let expected = x0.map(|v| 2.0 * v);
        assert_eq!(grads.get(x).unwrap(), &expected);
    }

    #[test]
    fn independent_loss_gives_zero_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::full([3], 2.0));
        let c = g.input(Tensor::full([3], 1.0));
        let loss = g.sum(c);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.wrt(&g, x), Tensor::zeros([3]));
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::full([3], 2.0));
        assert!(matches!(g.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn frozen_leaf_gets_nothing_but_passes_gradient_through() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::full([1, 3, 3], 1.0));
        let w = g.input(Tensor::full([1, 1, 3, 3], 0.5));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(w).is_none());
        // center pixel sees all 9 taps
        assert_eq!(grads.get(x).unwrap().data()[4], 4.5);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::full([2], 3.0));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let loss = g.sum(z);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[7.0, 7.0]);
    }

    #[test]
    fn matmul_one_by_one_is_one_mac() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::full([1, 1], 2.0));
        let b = g.input(Tensor::full([1, 1], 3.0));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).item(), 6.0);
        assert_eq!(count_macs(&g).total(), 1);
        assert_eq!(count_macs(&g).get(OpKind::MatMul), 1);
    }

    #[test]
    fn conv_mac_formula() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros([3, 8, 8]));
        let w = g.input(Tensor::zeros([4, 3, 3, 3]));
        g.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(count_macs(&g).total(), 4 * 3 * 9 * 64);
        assert_eq!(count_macs(&g).total(), 6912);
    }

    #[test]
    fn empty_graph_counts_nothing() {
        assert_eq!(count_macs(&Graph::<f32>::new()).total(), 0);
    }

    #[test]
    fn free_ops_count_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros([4, 2, 2]));
        let y = g.pixel_shuffle(x, 2).unwrap();
        let z = g.add(y, y).unwrap();
        let _ = g.interpolate_upsample(z, 2, InterpMode::Nearest).unwrap();
        assert_eq!(count_macs(&g).total(), 0);
        let _ = g.mul(z, z).unwrap();
        assert_eq!(count_macs(&g).total(), 16);
    }

    #[test]
    fn duplicate_shuffle_matches_nearest_bitwise() {
        let mut rng = Rng::new(4);
        let x0 = Tensor::<f32>::randn([3, 5, 6], &mut rng);
        let seed = Tensor::<f32>::randn([3, 10, 12], &mut rng);
        let run = |nearest: bool| {
            let mut g = Graph::<f32>::new();
            let x = g.variable(x0.clone());
            let y = if nearest {
                g.interpolate_upsample(x, 2, InterpMode::Nearest).unwrap()
            } else {
                let wide = g.repeat_channels(x, 4).unwrap();
                g.pixel_shuffle(wide, 2).unwrap()
            };
            let out = g.value(y).clone();
            (
                out,
                g.backward_from(y, seed.clone(), &[]).unwrap().wrt(&g, x),
            )
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn backward_from_seed_is_vjp() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::new([2], vec![1.0, -2.0]).unwrap());
        let y = g.scale(x, 3.0);
        let seed = Tensor::new([2], vec![0.5, 2.0]).unwrap();
        let grads = g.backward_from(y, seed, &[]).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.5, 6.0]);
    }

    #[test]
    fn retained_intermediate_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::full([2], 1.0));
        let y = g.scale(x, 2.0);
        let s = g.square(y);
        let loss = g.sum(s);
        let plain = g.backward(loss).unwrap();
        assert!(plain.get(y).is_none());
        let kept = g.backward_retaining(loss, &[y]).unwrap();
        assert_eq!(kept.get(y).unwrap().data(), &[4.0, 4.0]);
    }
}
