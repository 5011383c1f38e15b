use super::kernels::{self, ConvGeom, NormCache};
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        gain: Var,
        shift: Var,
        cache: NormCache<T>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    AvgPool {
        x: Var,
        k: usize,
        stride: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    ConcatChannels(Vec<Var>),
    /// Soft assignment to centers; with `straight_through` the forward value
    /// is the hard nearest center while the gradient is the soft one.
    SoftQuantize {
        x: Var,
        centers: Vec<T>,
        sigma: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose { .. } => "conv2d_transpose",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::Act { kind, .. } => match kind {
                Activation::Relu => "relu",
                Activation::LeakyRelu(_) => "leaky_relu",
                Activation::Tanh => "tanh",
            },
            Op::AvgPool { .. } => "avg_pool2d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::ConcatChannels(..) => "concat_channels",
            Op::SoftQuantize { .. } => "soft_quantize",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed ops. Inputs always precede their consumers, so
/// a reverse sweep over the node list is a valid backward schedule.
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf tracked for gradients (parameters, inputs under test).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    /// A leaf with no gradient (data, masks, detached values).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numerical(op.name(), "non-finite value in forward pass"));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::config(format!("{op}: shape mismatch {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// `weight` is `O x C x K x K`, `bias` has `O` entries.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4()?;
        let [o, ci, k, k2] = self.value(w).dims4()?;
        if ci != c || k != k2 || self.value(b).len() != o {
            return Err(Error::config(format!(
                "conv2d: input {:?}, weight {:?}, bias {:?} are incompatible",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let geom = ConvGeom::new(c, h, wd, k, stride, pad)?;
        let out = kernels::conv2d_forward(
            &geom,
            n,
            o,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let t = Tensor::new(&[n, o, geom.out_height, geom.out_width], out)?;
        self.push(t, Op::Conv2d { x, w, b, geom }, &[x, w, b])
    }

    /// Transposed conv. `weight` is `Cin x Cout x K x K`, output extent is
    /// `(H-1)*stride - 2*pad + K + out_pad`.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4()?;
        let [ci, o, k, k2] = self.value(w).dims4()?;
        if ci != c || k != k2 || self.value(b).len() != o {
            return Err(Error::config(format!(
                "conv2d_transpose: input {:?}, weight {:?}, bias {:?} are incompatible",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        if stride == 0 || (out_pad > 0 && out_pad >= stride) {
            return Err(Error::config("conv2d_transpose: need stride >= 1 and out_pad < stride"));
        }
        let full = (h - 1) * stride + k + out_pad;
        if full < 2 * pad + 1 {
            return Err(Error::config("conv2d_transpose: padding exceeds output extent"));
        }
        let oh = full - 2 * pad;
        let ow = (wd - 1) * stride + k + out_pad - 2 * pad;
        let geom = ConvGeom::new(o, oh, ow, k, stride, pad)?;
        debug_assert_eq!((geom.out_height, geom.out_width), (h, wd));
        let out = kernels::conv_transpose_forward(
            &geom,
            n,
            c,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let t = Tensor::new(&[n, o, oh, ow], out)?;
        self.push(t, Op::ConvTranspose { x, w, b, geom }, &[x, w, b])
    }

    pub fn instance_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let [_, c, h, w] = self.value(x).dims4()?;
        if h * w == 0 || self.value(gain).len() != c || self.value(shift).len() != c {
            return Err(Error::config("instance_norm: gain/shift must have one entry per channel"));
        }
        let (out, cache) = kernels::instance_norm_forward(
            self.value(x).data(),
            h * w,
            c,
            self.value(gain).data(),
            self.value(shift).data(),
            T::from_f64(eps),
        );
        let t = Tensor::new(self.value(x).shape(), out)?;
        self.push(t, Op::InstanceNorm { x, gain, shift, cache }, &[x, gain, shift])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(a) = kind {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::config(format!("leaky_relu slope {a} outside (0,1)")));
            }
        }
        let t = self.value(x).map(|v| match kind {
            Activation::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if v > T::zero() {
                    v
                } else {
                    v * T::from_f64(a)
                }
            }
            Activation::Tanh => v.tanh(),
        });
        self.push(t, Op::Act { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn avg_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let oh = kernels::pool_extent(h, k, stride)?;
        let ow = kernels::pool_extent(w, k, stride)?;
        let out = kernels::avg_pool_forward(self.value(x).data(), n * c, h, w, k, stride, oh, ow);
        let t = Tensor::new(&[n, c, oh, ow], out)?;
        self.push(t, Op::AvgPool { x, k, stride }, &[x])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape(), data)?;
        self.push(t, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        let t = self.value(a).map(|v| v * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        let t = self.value(a).map(|v| v + s);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|v| v * v);
        self.push(t, Op::Square(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|v| v.abs());
        self.push(t, Op::Abs(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(a).mean());
        self.push(t, Op::Mean(a), &[a])
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::config("concat of nothing"))?;
        let [n, _, h, w] = self.value(first).dims4()?;
        let mut total_c = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::config(format!(
                    "concat_channels: {:?} does not match {:?}",
                    self.value(p).shape(),
                    self.value(first).shape()
                )));
            }
            total_c += pc;
        }
        let mut data = Vec::with_capacity(n * total_c * h * w);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let sz = t.len() / n;
                data.extend_from_slice(&t.data()[b * sz..(b + 1) * sz]);
            }
        }
        let t = Tensor::new(&[n, total_c, h, w], data)?;
        self.push(t, Op::ConcatChannels(parts.to_vec()), parts)
    }

    /// Soft assignment `sum_j c_j softmax_j(-sigma (x - c_j)^2)`. With
    /// `straight_through` the forward value is replaced by the nearest center
    /// (ties to the lower index) while backward still uses the soft gradient.
    pub fn soft_quantize(
        &mut self,
        x: Var,
        centers: &[f64],
        sigma: f64,
        straight_through: bool,
    ) -> Result<Var> {
        let cs: Vec<T> = centers.iter().map(|&c| T::from_f64(c)).collect();
        let sg = T::from_f64(sigma);
        let t = if straight_through {
            self.value(x).map(|v| cs[nearest_center(&cs, v)])
        } else {
            self.value(x).map(|v| soft_assign(&cs, sg, v).0)
        };
        self.push(
            t,
            Op::SoftQuantize {
                x,
                centers: cs,
                sigma: sg,
            },
            &[x],
        )
    }

    /// Reverse sweep from a scalar `loss`. Consumes the record.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes;
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !g.is_finite() {
                return Err(Error::numerical(node.op.name(), "non-finite gradient in backward pass"));
            }
            propagate(&nodes, node, &g, &mut grads)?;
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::numerical("leaf", format!("non-finite gradient at node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of leaf values after [`Graph::backward`].
pub struct Gradients<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    /// `None` when the leaf did not influence the loss or was not tracked.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub(crate) fn nearest_center<T: Float>(centers: &[T], v: T) -> usize {
    // Centers are sorted: the first center whose midpoint with its successor
    // lies at or above v is the nearest, ties resolving to the lower index.
    for j in 0..centers.len() - 1 {
        let mid = (centers[j] + centers[j + 1]) * T::from_f64(0.5);
        if v <= mid {
            return j;
        }
    }
    centers.len() - 1
}

/// Returns (soft value, d soft / d x).
fn soft_assign<T: Float>(centers: &[T], sigma: T, x: T) -> (T, T) {
    let two = T::from_f64(2.0);
    let logits: Vec<T> = centers.iter().map(|&c| -sigma * (x - c) * (x - c)).collect();
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let weights: Vec<T> = logits.iter().map(|&a| (a - max).exp()).collect();
    let z: T = weights.iter().copied().sum();
    let mut value = T::zero();
    let mut mean_da = T::zero();
    let mut mean_c_da = T::zero();
    for (j, &c) in centers.iter().enumerate() {
        let p = weights[j] / z;
        let da = -two * sigma * (x - c);
        value = value + p * c;
        mean_da = mean_da + p * da;
        mean_c_da = mean_c_da + p * c * da;
    }
    (value, mean_c_da - value * mean_da)
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_with<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    f: impl Fn(&mut [T]),
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
    f(slot.data_mut());
}

fn elementwise<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    g: &Tensor<T>,
    f: impl Fn(usize, T) -> T,
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let data = g.data().iter().enumerate().map(|(i, &gi)| f(i, gi)).collect();
    accumulate(grads, v, Tensor::new(g.shape(), data).expect("shape preserved"));
}

fn propagate<T: Float>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) -> Result<()> {
    let val = |v: Var| &nodes[v.0].value;
    let rg = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, geom } => {
            let n = val(*x).shape()[0];
            let o = val(*w).shape()[0];
            let mut gx = rg(*x).then(|| vec![T::zero(); val(*x).len()]);
            let mut gw = rg(*w).then(|| vec![T::zero(); val(*w).len()]);
            let mut gb = rg(*b).then(|| vec![T::zero(); val(*b).len()]);
            kernels::conv2d_backward(
                geom,
                n,
                o,
                val(*x).data(),
                val(*w).data(),
                g.data(),
                gx.as_deref_mut(),
                gw.as_deref_mut(),
                gb.as_deref_mut(),
            );
            for (v, d) in [(*x, gx), (*w, gw), (*b, gb)] {
                if let Some(d) = d {
                    accumulate(grads, v, Tensor::new(val(v).shape(), d)?);
                }
            }
        }
        Op::ConvTranspose { x, w, b, geom } => {
            let [n, c, _, _] = val(*x).dims4()?;
            let mut gx = rg(*x).then(|| vec![T::zero(); val(*x).len()]);
            let mut gw = rg(*w).then(|| vec![T::zero(); val(*w).len()]);
            let mut gb = rg(*b).then(|| vec![T::zero(); val(*b).len()]);
            kernels::conv_transpose_backward(
                geom,
                n,
                c,
                val(*x).data(),
                val(*w).data(),
                g.data(),
                gx.as_deref_mut(),
                gw.as_deref_mut(),
                gb.as_deref_mut(),
            );
            for (v, d) in [(*x, gx), (*w, gw), (*b, gb)] {
                if let Some(d) = d {
                    accumulate(grads, v, Tensor::new(val(v).shape(), d)?);
                }
            }
        }
        Op::InstanceNorm {
            x,
            gain,
            shift,
            cache,
        } => {
            let [_, c, h, w] = val(*x).dims4()?;
            let mut gx = rg(*x).then(|| vec![T::zero(); val(*x).len()]);
            let mut gg = rg(*gain).then(|| vec![T::zero(); c]);
            let mut gs = rg(*shift).then(|| vec![T::zero(); c]);
            kernels::instance_norm_backward(
                cache,
                h * w,
                c,
                val(*gain).data(),
                g.data(),
                gx.as_deref_mut(),
                gg.as_deref_mut(),
                gs.as_deref_mut(),
            );
            for (v, d) in [(*x, gx), (*gain, gg), (*shift, gs)] {
                if let Some(d) = d {
                    accumulate(grads, v, Tensor::new(val(v).shape(), d)?);
                }
            }
        }
        Op::Act { x, kind } => {
            let xs = val(*x).data();
            let out = node.value.data();
            match *kind {
                Activation::Relu => elementwise(nodes, grads, *x, g, |i, gi| {
                    if xs[i] > T::zero() {
                        gi
                    } else {
                        T::zero()
                    }
                }),
                Activation::LeakyRelu(a) => {
                    let a = T::from_f64(a);
                    elementwise(nodes, grads, *x, g, |i, gi| {
                        if xs[i] > T::zero() {
                            gi
                        } else {
                            gi * a
                        }
                    })
                }
                Activation::Tanh => {
                    elementwise(nodes, grads, *x, g, |i, gi| gi * (T::one() - out[i] * out[i]))
                }
            }
        }
        Op::AvgPool { x, k, stride } => {
            let [n, c, h, w] = val(*x).dims4()?;
            let [_, _, oh, ow] = node.value.dims4()?;
            accumulate_with(nodes, grads, *x, |gi| {
                kernels::avg_pool_backward(g.data(), n * c, h, w, *k, *stride, oh, ow, gi)
            });
        }
        Op::Add(a, b) => {
            elementwise(nodes, grads, *a, g, |_, gi| gi);
            elementwise(nodes, grads, *b, g, |_, gi| gi);
        }
        Op::Sub(a, b) => {
            elementwise(nodes, grads, *a, g, |_, gi| gi);
            elementwise(nodes, grads, *b, g, |_, gi| -gi);
        }
        Op::Mul(a, b) => {
            let (da, db) = (val(*a).data(), val(*b).data());
            elementwise(nodes, grads, *a, g, |i, gi| gi * db[i]);
            elementwise(nodes, grads, *b, g, |i, gi| gi * da[i]);
        }
        Op::Scale(a, s) => elementwise(nodes, grads, *a, g, |_, gi| gi * *s),
        Op::AddScalar(a) => elementwise(nodes, grads, *a, g, |_, gi| gi),
        Op::Square(a) => {
            let d = val(*a).data();
            let two = T::from_f64(2.0);
            elementwise(nodes, grads, *a, g, |i, gi| gi * two * d[i]);
        }
        Op::Abs(a) => {
            let d = val(*a).data();
            elementwise(nodes, grads, *a, g, |i, gi| {
                if d[i] > T::zero() {
                    gi
                } else if d[i] < T::zero() {
                    -gi
                } else {
                    T::zero()
                }
            });
        }
        Op::Sum(a) => {
            let gi = g.item();
            if rg(*a) {
                accumulate(grads, *a, Tensor::full(val(*a).shape(), gi));
            }
        }
        Op::Mean(a) => {
            let gi = g.item() / T::from_f64(val(*a).len().max(1) as f64);
            if rg(*a) {
                accumulate(grads, *a, Tensor::full(val(*a).shape(), gi));
            }
        }
        Op::ConcatChannels(parts) => {
            let n = g.shape()[0];
            let per_batch = g.len() / n;
            let mut offset = 0;
            for &p in parts {
                let sz = val(p).len() / n;
                if rg(p) {
                    let mut d = Vec::with_capacity(val(p).len());
                    for b in 0..n {
                        let start = b * per_batch + offset;
                        d.extend_from_slice(&g.data()[start..start + sz]);
                    }
                    accumulate(grads, p, Tensor::new(val(p).shape(), d)?);
                }
                offset += sz;
            }
        }
        Op::SoftQuantize { x, centers, sigma } => {
            let xs = val(*x).data();
            elementwise(nodes, grads, *x, g, |i, gi| {
                gi * soft_assign(centers, *sigma, xs[i]).1
            });
        }
    }
    Ok(())
}
