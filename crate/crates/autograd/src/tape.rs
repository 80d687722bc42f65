//! Reverse-mode tape.
//!
//! Every operation appends a node holding its value and whatever it needs
//! for the backward pass. `Tape::backward` walks the nodes in reverse.

use std::fmt;

use crate::conv::{self, ConvGeom};
use crate::gru::{self, GruCache};
use crate::scalar::{gemm, Scalar, Trans};
use crate::tensor::{inverse_perm, split_dims, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-defined differentiable operation.
///
/// The forward value is computed by the caller and handed to
/// [`Tape::custom`]; the op only has to supply the vector-Jacobian product.
pub trait CustomOp<S: Scalar> {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (`None` where it is not needed).
    fn backward(&self, inputs: &[&Tensor<S>], output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>>;
}

enum Op<S: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Tanh(Var),
    Sigmoid(Var),
    Prelu(Var, Var),
    MatMul(Var, Var),
    AddBiasLast(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Gru {
        x: Var,
        wx: Var,
        wh: Var,
        bx: Var,
        bh: Var,
        reverse: bool,
        cache: Box<GruCache<S>>,
    },
    AvgPoolLast {
        x: Var,
        k: usize,
    },
    UpsampleLast {
        x: Var,
        k: usize,
    },
    Sum(Var),
    ComplexMul(Var, Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<S>>,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// A recording of one forward computation.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> fmt::Debug for Tape<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
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

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.shape(), data);
        let rg = self.any_grad(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|v| v * c);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(crate::scalar::tanh);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| S::one() / (S::one() + (-v).exp()));
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Channel-wise PReLU; `slope` has one entry per leading-axis channel.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Var {
        let (vx, va) = (self.value(x), self.value(slope));
        let c = vx.dim(0);
        assert_eq!(va.len(), c, "prelu slope count");
        let plane = vx.len() / c;
        let mut out = vx.clone();
        for (ch, &a) in va.data().iter().enumerate() {
            for v in &mut out.data_mut()[ch * plane..(ch + 1) * plane] {
                if *v < S::zero() {
                    *v *= a;
                }
            }
        }
        let rg = self.any_grad(&[x, slope]);
        self.push(out, Op::Prelu(x, slope), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// Adds `bias: (c)` along the last axis of `x: (.., c)`.
    pub fn add_bias_last(&mut self, x: Var, bias: Var) -> Var {
        let vb = self.value(bias).clone();
        let c = vb.len();
        let mut out = self.value(x).clone();
        assert_eq!(*out.shape().last().unwrap(), c, "bias length");
        for row in out.data_mut().chunks_mut(c) {
            for (v, &b) in row.iter_mut().zip(vb.data()) {
                *v += b;
            }
        }
        let rg = self.any_grad(&[x, bias]);
        self.push(out, Op::AddBiasLast(x, bias), rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let value = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push(value, Op::Conv2d { x, w, b, geom }, rg)
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let value = conv::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push(value, Op::ConvTranspose2d { x, w, b, geom }, rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        let vals: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat(&vals, axis);
        let rg = self.any_grad(parts);
        self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        )
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let value = self.value(x).narrow(axis, start, len);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Narrow { x, axis, start }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).reshaped(shape);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Reshape(x), rg)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let value = self.value(x).permute(perm);
        let rg = self.any_grad(&[x]);
        self.push(
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        )
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let value = softmax(self.value(x), axis);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Softmax { x, axis }, rg)
    }

    /// GRU over `x: (len, batch, in)` starting from a zero state.
    pub fn gru(&mut self, x: Var, wx: Var, wh: Var, bx: Var, bh: Var, reverse: bool) -> Var {
        let (value, cache) = gru::gru_forward(
            self.value(x),
            self.value(wx),
            self.value(wh),
            self.value(bx),
            self.value(bh),
            reverse,
        );
        let rg = self.any_grad(&[x, wx, wh, bx, bh]);
        self.push(
            value,
            Op::Gru {
                x,
                wx,
                wh,
                bx,
                bh,
                reverse,
                cache: Box::new(cache),
            },
            rg,
        )
    }

    /// Average pooling with window and stride `k` along the last axis.
    /// A trailing partial window averages the frames it has.
    pub fn avg_pool_last(&mut self, x: Var, k: usize) -> Var {
        let vx = self.value(x);
        let t = *vx.shape().last().unwrap();
        let tp = t.div_ceil(k);
        let rows = vx.len() / t;
        let mut out = Vec::with_capacity(rows * tp);
        for row in vx.data().chunks(t) {
            for j in 0..tp {
                let seg = &row[j * k..((j + 1) * k).min(t)];
                out.push(seg.iter().copied().sum::<S>() / S::from_usize(seg.len()).unwrap());
            }
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = tp;
        let value = Tensor::from_vec(&shape, out);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::AvgPoolLast { x, k }, rg)
    }

    /// Nearest-neighbour upsampling by `k` along the last axis, cropped to `len`.
    pub fn upsample_last(&mut self, x: Var, k: usize, len: usize) -> Var {
        let vx = self.value(x);
        let tp = *vx.shape().last().unwrap();
        assert_eq!(tp, len.div_ceil(k), "upsample length mismatch");
        let mut out = Vec::with_capacity(vx.len() / tp * len);
        for row in vx.data().chunks(tp) {
            out.extend((0..len).map(|t| row[t / k]));
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::from_vec(&shape, out);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::UpsampleLast { x, k }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// Complex product of two `(2F, ..)` tensors stored as `[real; imag]` halves.
    pub fn complex_mul(&mut self, a: Var, b: Var) -> Var {
        let value = complex_mul(self.value(a), self.value(b));
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::ComplexMul(a, b), rg)
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor<S>, op: Box<dyn CustomOp<S>>) -> Var {
        let rg = self.any_grad(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Back-propagates from a scalar `root`. Only leaves keep their gradients.
    pub fn backward(&self, root: Var) -> Gradients<S> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), S::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let acc = |grads: &mut [Option<Tensor<S>>], v: Var, t: Tensor<S>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    acc(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, hadamard(g, self.value(*b)));
                }
                if self.wants(*b) {
                    acc(grads, *b, hadamard(g, self.value(*a)));
                }
            }
            Op::Scale(a, c) => acc(grads, *a, g.map(|v| v * *c)),
            Op::Tanh(a) => {
                let y = &node.value;
                let d = g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * (S::one() - yv * yv)).collect();
                acc(grads, *a, Tensor::from_vec(g.shape(), d));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d = g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * yv * (S::one() - yv)).collect();
                acc(grads, *a, Tensor::from_vec(g.shape(), d));
            }
            Op::Prelu(x, slope) => {
                let (vx, va) = (self.value(*x), self.value(*slope));
                let c = vx.dim(0);
                let plane = vx.len() / c;
                let mut gx = g.clone();
                let mut ga = vec![S::zero(); c];
                for ch in 0..c {
                    let a = va.data()[ch];
                    let range = ch * plane..(ch + 1) * plane;
                    for (gv, &xv) in gx.data_mut()[range.clone()].iter_mut().zip(&vx.data()[range]) {
                        if xv < S::zero() {
                            ga[ch] += *gv * xv;
                            *gv *= a;
                        }
                    }
                }
                if self.wants(*x) {
                    acc(grads, *x, gx);
                }
                if self.wants(*slope) {
                    acc(grads, *slope, Tensor::from_vec(va.shape(), ga));
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.dim(0), va.dim(1), vb.dim(1));
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(va.shape());
                    gemm(m, n, k, S::one(), g.data(), Trans::No, vb.data(), Trans::Yes, S::zero(), ga.data_mut());
                    acc(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(vb.shape());
                    gemm(k, m, n, S::one(), va.data(), Trans::Yes, g.data(), Trans::No, S::zero(), gb.data_mut());
                    acc(grads, *b, gb);
                }
            }
            Op::AddBiasLast(x, b) => {
                if self.wants(*x) {
                    acc(grads, *x, g.clone());
                }
                if self.wants(*b) {
                    let c = self.value(*b).len();
                    let mut gb = vec![S::zero(); c];
                    for row in g.data().chunks(c) {
                        for (acc_v, &v) in gb.iter_mut().zip(row) {
                            *acc_v += v;
                        }
                    }
                    acc(grads, *b, Tensor::from_vec(&[c], gb));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = conv::conv2d_backward(self.value(*x), self.value(*w), g, geom, self.wants(*x));
                if let Some(gx) = gx {
                    acc(grads, *x, gx);
                }
                if self.wants(*w) {
                    acc(grads, *w, gw);
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    acc(grads, b, gb);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (gx, gw, gb) =
                    conv::conv_transpose2d_backward(self.value(*x), self.value(*w), g, geom, self.wants(*x));
                if let Some(gx) = gx {
                    acc(grads, *x, gx);
                }
                if self.wants(*w) {
                    acc(grads, *w, gw);
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    acc(grads, b, gb);
                }
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).dim(*axis);
                    if self.wants(p) {
                        acc(grads, p, g.narrow(*axis, start, len));
                    }
                    start += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let vx = self.value(*x);
                let (outer, mid, inner) = split_dims(vx.shape(), *axis);
                let len = g.dim(*axis);
                let mut gx = Tensor::zeros(vx.shape());
                for o in 0..outer {
                    let dst = o * mid * inner + start * inner;
                    let src = o * len * inner;
                    gx.data_mut()[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                acc(grads, *x, gx);
            }
            Op::Reshape(x) => acc(grads, *x, g.reshaped(self.value(*x).shape())),
            Op::Permute { x, perm } => acc(grads, *x, g.permute(&inverse_perm(perm))),
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, mid, inner) = split_dims(y.shape(), *axis);
                let mut gx = Tensor::zeros(y.shape());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |m: usize| o * mid * inner + m * inner + i;
                        let dot: S = (0..mid).map(|m| g.data()[at(m)] * y.data()[at(m)]).sum();
                        for m in 0..mid {
                            gx.data_mut()[at(m)] = y.data()[at(m)] * (g.data()[at(m)] - dot);
                        }
                    }
                }
                acc(grads, *x, gx);
            }
            Op::Gru {
                x,
                wx,
                wh,
                bx,
                bh,
                reverse,
                cache,
            } => {
                let (dx, dwx, dwh, dbx, dbh) = gru::gru_backward(
                    self.value(*x),
                    self.value(*wx),
                    self.value(*wh),
                    &node.value,
                    cache,
                    g,
                    *reverse,
                    self.wants(*x),
                );
                if let Some(dx) = dx {
                    acc(grads, *x, dx);
                }
                for (v, t) in [(*wx, dwx), (*wh, dwh), (*bx, dbx), (*bh, dbh)] {
                    if self.wants(v) {
                        acc(grads, v, t);
                    }
                }
            }
            Op::AvgPoolLast { x, k } => {
                let vx = self.value(*x);
                let t = *vx.shape().last().unwrap();
                let tp = *g.shape().last().unwrap();
                let mut gx = Tensor::zeros(vx.shape());
                for (grow, xrow) in g.data().chunks(tp).zip(gx.data_mut().chunks_mut(t)) {
                    for (j, &gv) in grow.iter().enumerate() {
                        let hi = ((j + 1) * k).min(t);
                        let share = gv / S::from_usize(hi - j * k).unwrap();
                        for v in &mut xrow[j * k..hi] {
                            *v = share;
                        }
                    }
                }
                acc(grads, *x, gx);
            }
            Op::UpsampleLast { x, k } => {
                let vx = self.value(*x);
                let tp = *vx.shape().last().unwrap();
                let len = *g.shape().last().unwrap();
                let mut gx = Tensor::zeros(vx.shape());
                for (grow, xrow) in g.data().chunks(len).zip(gx.data_mut().chunks_mut(tp)) {
                    for (t, &gv) in grow.iter().enumerate() {
                        xrow[t / k] += gv;
                    }
                }
                acc(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                acc(grads, *x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::ComplexMul(a, b) => {
                // d/da = g * conj(b), d/db = g * conj(a)
                if self.wants(*a) {
                    acc(grads, *a, complex_mul_conj(g, self.value(*b)));
                }
                if self.wants(*b) {
                    acc(grads, *b, complex_mul_conj(g, self.value(*a)));
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<S>> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&vals, &node.value, g);
                assert_eq!(gs.len(), inputs.len(), "custom op {} returned wrong arity", op.name());
                for (&v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi.filter(|_| self.wants(v)) {
                        acc(grads, v, gi);
                    }
                }
            }
        }
    }
}

fn hadamard<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let d = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_vec(a.shape(), d)
}

/// Softmax along `axis`, max-shifted.
pub fn softmax<S: Scalar>(x: &Tensor<S>, axis: usize) -> Tensor<S> {
    let (outer, mid, inner) = split_dims(x.shape(), axis);
    let mut out = Tensor::zeros(x.shape());
    for o in 0..outer {
        for i in 0..inner {
            let at = |m: usize| o * mid * inner + m * inner + i;
            let max = (0..mid).map(|m| x.data()[at(m)]).fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for m in 0..mid {
                let e = (x.data()[at(m)] - max).exp();
                out.data_mut()[at(m)] = e;
                total += e;
            }
            for m in 0..mid {
                out.data_mut()[at(m)] /= total;
            }
        }
    }
    out
}

/// Complex product of `[re; im]`-stacked tensors (split on the leading axis).
pub fn complex_mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    complex_op(a, b, false)
}

fn complex_mul_conj<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    complex_op(a, b, true)
}

fn complex_op<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, conj_b: bool) -> Tensor<S> {
    assert_eq!(a.shape(), b.shape(), "complex_mul shape mismatch");
    assert!(a.dim(0) % 2 == 0, "complex tensors need an even leading axis");
    let half = a.len() / 2;
    let (are, aim) = a.data().split_at(half);
    let (bre, bim) = b.data().split_at(half);
    let mut out = vec![S::zero(); a.len()];
    let (ore, oim) = out.split_at_mut(half);
    for i in 0..half {
        let bi = if conj_b { -bim[i] } else { bim[i] };
        ore[i] = are[i] * bre[i] - aim[i] * bi;
        oim[i] = are[i] * bi + aim[i] * bre[i];
    }
    Tensor::from_vec(a.shape(), out)
}
