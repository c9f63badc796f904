use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{self, ConvGeom};
use super::{Tensor, TensorError};
use crate::scalar::Scalar;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarAdd(Var),
    ScalarMul(Var, T),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    LeakyRelu(Var, T),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Concat(Var, Var),
    L1Loss(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Operation record for one forward pass. Node order is insertion order,
/// which is a topological order because inputs must exist before use.
#[derive(Debug)]
pub struct Graph<T> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one [`Graph::backward`] call.
#[derive(Debug)]
pub struct Gradients<T> {
    graph: u32,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`, or `None` if no path carries one.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_deref())
    }

    /// Euclidean norm of the gradient at `v`; zero when absent.
    pub fn norm(&self, v: Var) -> T {
        self.get(v)
            .map(|g| g.iter().map(|&x| x * x).sum::<T>().sqrt())
            .unwrap_or_else(T::zero)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node<T>, TensorError> {
        if v.graph != self.id {
            return Err(TensorError::ForeignVar);
        }
        self.nodes.get(v.index).ok_or(TensorError::ForeignVar)
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).expect("var from this graph").value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).map(|n| n.requires_grad).unwrap_or(false)
    }

    /// Whether `v` was produced by an operation (as opposed to a leaf).
    pub fn has_op(&self, v: Var) -> bool {
        self.node(v).map(|n| !matches!(n.op, Op::Leaf)).unwrap_or(false)
    }

    /// Gradient interruption: a new leaf holding `x`'s values, with no
    /// recorded producer and no gradient requirement.
    pub fn detach(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.node(x)?.value.clone();
        Ok(self.leaf(value, false))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let value = self.node(a)?.value.zip_with(&self.node(b)?.value, name, f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scalar_add(&mut self, a: Var, s: T) -> Result<Var, TensorError> {
        let value = self.node(a)?.value.map(|x| x + s);
        let rg = self.rg(a);
        Ok(self.push(value, rg, Op::ScalarAdd(a)))
    }

    pub fn scalar_mul(&mut self, a: Var, s: T) -> Result<Var, TensorError> {
        let value = self.node(a)?.value.map(|x| x * s);
        let rg = self.rg(a);
        Ok(self.push(value, rg, Op::ScalarMul(a, s)))
    }

    /// Cross-correlation with zero padding. `weight` is `O x C x K x K`
    /// with odd `K`, `bias` has `O` entries.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let (n, c, h, w) = self.node(input)?.value.dims4("conv2d")?;
        let (o, wc, kh, kw) = self.node(weight)?.value.dims4("conv2d")?;
        let bias_shape = self.node(bias)?.value.shape().to_vec();
        if wc != c {
            return Err(TensorError::ChannelMismatch { input: c, weight: wc });
        }
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::ConvGeometry(format!("kernel {kh}x{kw} must be square and odd")));
        }
        if bias_shape != [o] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![o],
                rhs: bias_shape,
            });
        }
        if stride == 0 {
            return Err(TensorError::ConvGeometry("stride must be >= 1".into()));
        }
        let k = kh;
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(TensorError::ConvGeometry(format!(
                "non-positive output extent for {h}x{w} input, kernel {k}, padding {padding}"
            )));
        }
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (w + 2 * padding - k) / stride + 1;
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            o,
            k,
            stride,
            padding,
            ho,
            wo,
        };
        let data = kernels::conv2d_forward(
            &geom,
            self.nodes[input.index].value.data(),
            self.nodes[weight.index].value.data(),
            self.nodes[bias.index].value.data(),
        );
        let value = Tensor::new(vec![n, o, ho, wo], data)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var, TensorError> {
        if !(slope >= T::zero() && slope < T::one()) {
            return Err(TensorError::BadSlope(slope.to_f64().unwrap_or(f64::NAN)));
        }
        let value = self
            .node(x)?
            .value
            .map(|v| if v >= T::zero() { v } else { slope * v });
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::LeakyRelu(x, slope)))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var, TensorError> {
        let dims @ (n, c, h, w) = self.node(x)?.value.dims4("maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::OddExtent { h, w });
        }
        let (data, argmax) = kernels::maxpool2_forward(dims, self.nodes[x.index].value.data());
        let value = Tensor::new(vec![n, c, h / 2, w / 2], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::MaxPool2 { input: x, argmax }))
    }

    pub fn upsample2_nearest(&mut self, x: Var) -> Result<Var, TensorError> {
        let dims @ (n, c, h, w) = self.node(x)?.value.dims4("upsample2")?;
        let data = kernels::upsample2_forward(dims, self.nodes[x.index].value.data());
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Upsample2(x)))
    }

    /// Channel concatenation, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (na, ca, ha, wa) = self.node(a)?.value.dims4("concat_channels")?;
        let (nb, cb, hb, wb) = self.node(b)?.value.dims4("concat_channels")?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: vec![na, ca, ha, wa],
                rhs: vec![nb, cb, hb, wb],
            });
        }
        let (la, lb) = (ca * ha * wa, cb * hb * wb);
        let mut data = Vec::with_capacity(na * (la + lb));
        let (da, db) = (self.nodes[a.index].value.data(), self.nodes[b.index].value.data());
        for i in 0..na {
            data.extend_from_slice(&da[i * la..(i + 1) * la]);
            data.extend_from_slice(&db[i * lb..(i + 1) * lb]);
        }
        let value = Tensor::new(vec![na, ca + cb, ha, wa], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Concat(a, b)))
    }

    /// Mean absolute difference over all elements, as a scalar.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let p = &self.node(pred)?.value;
        let t = &self.node(target)?.value;
        p.expect_same_shape(t, "l1_loss")?;
        let count = T::from_usize(p.numel().max(1)).expect("count fits");
        let total: T = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(total / count), rg, Op::L1Loss(pred, target)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let total: T = self.node(x)?.value.data().iter().copied().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(total), rg, Op::Sum(x)))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// over every consumer of a node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let root = self.node(loss)?;
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.index] = Some(vec![T::one()]);
        }
        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.index] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contribution) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce() -> Vec<T>) {
        if self.rg(v) {
            let c = f();
            self.accumulate(grads, v, c);
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_with(grads, *a, || g.to_vec());
                self.accumulate_with(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate_with(grads, *a, || g.to_vec());
                self.accumulate_with(grads, *b, || g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[a.index].value.data(), self.nodes[b.index].value.data());
                self.accumulate_with(grads, *a, || g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                self.accumulate_with(grads, *b, || g.iter().zip(va).map(|(&x, &y)| x * y).collect());
            }
            Op::ScalarAdd(a) => self.accumulate_with(grads, *a, || g.to_vec()),
            Op::ScalarMul(a, s) => self.accumulate_with(grads, *a, || g.iter().map(|&x| x * *s).collect()),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need = (self.rg(*input), self.rg(*weight), self.rg(*bias));
                let out = kernels::conv2d_backward(
                    geom,
                    self.nodes[input.index].value.data(),
                    self.nodes[weight.index].value.data(),
                    g,
                    need,
                );
                if let Some(gi) = out.input {
                    self.accumulate(grads, *input, gi);
                }
                if let Some(gw) = out.weight {
                    self.accumulate(grads, *weight, gw);
                }
                if let Some(gb) = out.bias {
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let vx = self.nodes[x.index].value.data();
                self.accumulate_with(grads, *x, || {
                    g.iter()
                        .zip(vx)
                        .map(|(&gv, &xv)| if xv >= T::zero() { gv } else { gv * *slope })
                        .collect()
                });
            }
            Op::MaxPool2 { input, argmax } => {
                let len = self.nodes[input.index].value.numel();
                self.accumulate_with(grads, *input, || {
                    let mut out = vec![T::zero(); len];
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        out[idx] += gv;
                    }
                    out
                });
            }
            Op::Upsample2(x) => {
                let dims = self.nodes[x.index].value.dims4("upsample2").expect("rank 4");
                self.accumulate_with(grads, *x, || kernels::upsample2_backward(dims, g));
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = self.nodes[a.index].value.dims4("concat").expect("rank 4");
                let cb = self.nodes[b.index].value.shape()[1];
                let (la, lb) = (ca * h * w, cb * h * w);
                self.accumulate_with(grads, *a, || {
                    (0..n).flat_map(|i| g[i * (la + lb)..i * (la + lb) + la].iter().copied()).collect()
                });
                self.accumulate_with(grads, *b, || {
                    (0..n)
                        .flat_map(|i| g[i * (la + lb) + la..(i + 1) * (la + lb)].iter().copied())
                        .collect()
                });
            }
            Op::L1Loss(p, t) => {
                let (vp, vt) = (self.nodes[p.index].value.data(), self.nodes[t.index].value.data());
                let scale = g[0] / T::from_usize(vp.len().max(1)).expect("count fits");
                let sign = |d: T| {
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                };
                self.accumulate_with(grads, *p, || vp.iter().zip(vt).map(|(&a, &b)| sign(a - b)).collect());
                self.accumulate_with(grads, *t, || vp.iter().zip(vt).map(|(&a, &b)| -sign(a - b)).collect());
            }
            Op::Sum(x) => {
                let len = self.nodes[x.index].value.numel();
                self.accumulate_with(grads, *x, || vec![g[0]; len]);
            }
        }
    }
}
