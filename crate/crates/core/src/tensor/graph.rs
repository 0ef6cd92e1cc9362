use super::conv::{self, ConvGeom};
use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The kind of operation that produced a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Relu,
    Concat,
    Add,
    Tonemap,
    L1Mean,
    Scale,
    Sum,
    AvgPool2,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        dilation: usize,
    },
    Relu(Var),
    Concat(Var, Var),
    Add(Var, Var),
    Tonemap {
        x: Var,
        mu: f64,
    },
    L1Mean(Var, Var),
    Scale(Var, T),
    Sum(Var),
    AvgPool2(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu(_) => OpKind::Relu,
            Op::Concat(..) => OpKind::Concat,
            Op::Add(..) => OpKind::Add,
            Op::Tonemap { .. } => OpKind::Tonemap,
            Op::L1Mean(..) => OpKind::L1Mean,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(_) => OpKind::Sum,
            Op::AvgPool2(_) => OpKind::AvgPool2,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            } => vec![input, weight, bias],
            Op::Relu(x) | Op::Sum(x) | Op::AvgPool2(x) | Op::Scale(x, _) => vec![x],
            Op::Tonemap { x, .. } => vec![x],
            Op::Concat(a, b) | Op::Add(a, b) | Op::L1Mean(a, b) => vec![a, b],
        }
    }
}

struct Node<T> {
    op: Op<T>,
    shape: Shape,
    /// `None` once released by an inference-mode graph.
    value: Option<Tensor<T>>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Public view of one recorded operation, for audits.
#[derive(Clone, Debug)]
pub struct OpRecord {
    pub kind: OpKind,
    pub output: Var,
    pub inputs: Vec<Var>,
    pub shape: Shape,
}

/// An append-only tape of executed operations.
///
/// Nodes are stored in execution order, so a reverse scan is a valid
/// topological order for backward.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
    region: Option<u64>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// A graph that supports [`Graph::backward`].
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: true,
            region: None,
        }
    }

    /// A forward-only graph: leaves never require gradients and
    /// [`Graph::release`] actually frees memory.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: false,
            region: None,
        }
    }

    /// Starts fingerprinting the sign pattern of every nonsmooth op
    /// (ReLU inputs, L1 differences) from here on.
    pub fn track_region(&mut self) {
        self.region = Some(0xcbf2_9ce4_8422_2325);
    }

    /// A hash of the tracked sign pattern. Two evaluations with equal
    /// fingerprints lie in the same piecewise-smooth region.
    pub fn region(&self) -> Option<u64> {
        self.region
    }

    fn note_signs(&mut self, signs: impl Iterator<Item = bool>) {
        if let Some(h) = self.region.as_mut() {
            for b in signs {
                *h = (*h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.recording;
        self.push(Op::Leaf, value, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        let id = Var(self.nodes.len());
        self.nodes.push(Node {
            op,
            shape: value.shape(),
            value: Some(value),
            requires_grad,
            grad: None,
        });
        id
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// The forward value of `v`.
    ///
    /// # Panics
    /// If the value was dropped with [`Graph::release`].
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.node(v)
            .value
            .as_ref()
            .unwrap_or_else(|| panic!("value of node {} was released", v.0))
    }

    /// Accumulated gradient of the last backward passes, if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.node(v).grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let n = self.node(v);
        n.grad
            .as_ref()
            .map(|g| Tensor::from_vec(n.shape, g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Drops the stored value of `v` on inference graphs. No-op when recording.
    pub fn release(&mut self, v: Var) {
        if !self.recording {
            self.nodes[v.0].value = None;
        }
    }

    pub fn ops(&self) -> impl Iterator<Item = OpRecord> + '_ {
        self.nodes.iter().enumerate().map(|(i, n)| OpRecord {
            kind: n.op.kind(),
            output: Var(i),
            inputs: n.op.inputs(),
            shape: n.shape,
        })
    }

    pub fn count_ops(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::contract(format!("{op}: shape {sa} does not match {sb}")));
        }
        Ok(sa)
    }

    /// Stride-1 convolution with "same" zero padding.
    ///
    /// `weight` is `[cout, cin, k, k]` with `k` in {1, 3}; `bias` holds `cout`
    /// elements (any 4-D arrangement).
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, dilation: usize) -> Result<Var> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        if dilation < 1 {
            return Err(Error::contract("conv2d: dilation must be at least 1"));
        }
        if sw.h != sw.w || !(sw.h == 1 || sw.h == 3) {
            return Err(Error::contract(format!(
                "conv2d: kernel must be 1x1 or 3x3, weight shape is {sw}"
            )));
        }
        if sw.c != si.c {
            return Err(Error::contract(format!(
                "conv2d: input has {} channels but weight expects {}",
                si.c, sw.c
            )));
        }
        if sb.numel() != sw.n {
            return Err(Error::contract(format!(
                "conv2d: bias has {} elements for {} output channels",
                sb.numel(),
                sw.n
            )));
        }
        let geom = ConvGeom {
            n: si.n,
            cin: si.c,
            cout: sw.n,
            h: si.h,
            w: si.w,
            k: sw.h,
            dilation,
        };
        let data = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let out = Tensor::from_vec(Shape::new(si.n, sw.n, si.h, si.w), data)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                dilation,
            },
            out,
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        if self.region.is_some() {
            let signs: Vec<bool> = self.value(x).data().iter().map(|&v| v > T::zero()).collect();
            self.note_signs(signs.into_iter());
        }
        let rg = self.any_grad(&[x]);
        self.push(Op::Relu(x), out, rg)
    }

    /// Concatenates along channels; `a`'s channels come first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::contract(format!(
                "concat_channels: {sa} and {sb} differ outside the channel axis"
            )));
        }
        let plane = sa.plane();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(sa.numel() + sb.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&va[n * sa.c * plane..(n + 1) * sa.c * plane]);
            data.extend_from_slice(&vb[n * sb.c * plane..(n + 1) * sb.c * plane]);
        }
        let out = Tensor::from_vec(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Concat(a, b), out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(shape, data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    /// `log(1 + mu * x) / log(1 + mu)`, elementwise. Requires `x >= 0`.
    pub fn log1p_scaled(&mut self, x: Var, mu: f64) -> Result<Var> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::contract(format!("tonemap: mu must be positive, got {mu}")));
        }
        let xs = self.value(x).data();
        if let Some((index, &v)) = xs.iter().enumerate().find(|(_, v)| !(**v >= T::zero())) {
            return Err(Error::Domain {
                op: "log1p_scaled",
                index,
                value: v.as_f64(),
            });
        }
        let mu_t = T::from_f64(mu);
        let denom = T::from_f64(mu.ln_1p());
        let out = self.value(x).map(|v| (mu_t * v).ln_1p() / denom);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::Tonemap { x, mu }, out, rg))
    }

    /// Mean absolute difference, as a scalar.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("l1_mean", a, b)?;
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        let out = Tensor::scalar(total / T::from_f64(shape.numel() as f64));
        if self.region.is_some() {
            let signs: Vec<bool> = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| x > y)
                .collect();
            self.note_signs(signs.into_iter());
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::L1Mean(a, b), out, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let out = self.value(x).map(|v| v * f);
        let rg = self.any_grad(&[x]);
        self.push(Op::Scale(x, f), out, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().copied().sum();
        let rg = self.any_grad(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(total), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.shape(x).numel();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sums same-shaped values left to right.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::contract("add_all: empty input"))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.h < 2 || s.w < 2 {
            return Err(Error::contract(format!("avg_pool2: input {s} is smaller than 2x2")));
        }
        let (oh, ow) = (s.h / 2, s.w / 2);
        let v = self.value(x);
        let quarter = T::from_f64(0.25);
        let out = Tensor::from_fn(Shape::new(s.n, s.c, oh, ow), |[n, c, y, xx]| {
            let (y0, x0) = (2 * y, 2 * xx);
            (v.get(n, c, y0, x0) + v.get(n, c, y0, x0 + 1) + v.get(n, c, y0 + 1, x0) + v.get(n, c, y0 + 1, x0 + 1))
                * quarter
        });
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::AvgPool2(x), out, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients add into whatever earlier calls left on the nodes; call
    /// [`Graph::zero_grad`] to start fresh.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.shape(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward: loss must be a scalar, got shape {}",
                self.shape(loss)
            )));
        }
        if !self.recording {
            return Err(Error::contract("backward: graph was built in inference mode"));
        }
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            for (v, contrib) in self.local_grads(&op, Var(i), &g) {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut pending[v.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &c)| *a += c),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of one node w.r.t. each input needing grad.
    fn local_grads(&self, op: &Op<T>, out: Var, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let need = |v: Var| self.node(v).requires_grad;
        match *op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                dilation,
            } => {
                let (si, sw) = (self.shape(input), self.shape(weight));
                let geom = ConvGeom {
                    n: si.n,
                    cin: si.c,
                    cout: sw.n,
                    h: si.h,
                    w: si.w,
                    k: sw.h,
                    dilation,
                };
                let grads = conv::backward(
                    &geom,
                    self.value(input).data(),
                    self.value(weight).data(),
                    g,
                    (need(input), need(weight), need(bias)),
                );
                let mut res = Vec::with_capacity(3);
                if let Some(dx) = grads.input {
                    res.push((input, dx));
                }
                if let Some(dw) = grads.weight {
                    res.push((weight, dw));
                }
                if let Some(db) = grads.bias {
                    res.push((bias, db));
                }
                res
            }
            Op::Relu(x) => {
                let xs = self.value(x).data();
                let dx = xs
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(x, dx)]
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let plane = sa.plane();
                let (ca, cb) = (sa.c * plane, sb.c * plane);
                let mut ga = Vec::with_capacity(sa.numel());
                let mut gb = Vec::with_capacity(sb.numel());
                for item in g.chunks(ca + cb) {
                    ga.extend_from_slice(&item[..ca]);
                    gb.extend_from_slice(&item[ca..]);
                }
                let mut res = Vec::with_capacity(2);
                if need(a) {
                    res.push((a, ga));
                }
                if need(b) {
                    res.push((b, gb));
                }
                res
            }
            Op::Add(a, b) => {
                let mut res = Vec::with_capacity(2);
                if need(a) {
                    res.push((a, g.to_vec()));
                }
                if need(b) {
                    res.push((b, g.to_vec()));
                }
                res
            }
            Op::Tonemap { x, mu } => {
                let mu_t = T::from_f64(mu);
                let denom = T::from_f64(mu.ln_1p());
                let dx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| gv * mu_t / ((T::one() + mu_t * v) * denom))
                    .collect();
                vec![(x, dx)]
            }
            Op::L1Mean(a, b) => {
                let n = T::from_f64(self.shape(a).numel() as f64);
                let scale = g[0] / n;
                let signs: Vec<T> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(&x, &y)| {
                        if x > y {
                            scale
                        } else if x < y {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let mut res = Vec::with_capacity(2);
                if need(b) {
                    res.push((b, signs.iter().map(|&s| -s).collect()));
                }
                if need(a) {
                    res.push((a, signs));
                }
                res
            }
            Op::Scale(x, f) => vec![(x, g.iter().map(|&v| v * f).collect())],
            Op::Sum(x) => vec![(x, vec![g[0]; self.shape(x).numel()])],
            Op::AvgPool2(x) => {
                let s = self.shape(x);
                let so = self.shape(out);
                let mut dx = vec![T::zero(); s.numel()];
                let quarter = T::from_f64(0.25);
                for n in 0..s.n {
                    for c in 0..s.c {
                        for y in 0..so.h {
                            for xx in 0..so.w {
                                let gv = g[((n * so.c + c) * so.h + y) * so.w + xx] * quarter;
                                for (dy, dxx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    let i = ((n * s.c + c) * s.h + 2 * y + dy) * s.w + 2 * xx + dxx;
                                    dx[i] += gv;
                                }
                            }
                        }
                    }
                }
                vec![(x, dx)]
            }
        }
    }
}
