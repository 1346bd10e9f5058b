use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ops::{self, gemm, Binary, ConvGeom, Unary};
use super::{shape_len, Tensor};

/// Probability clamp applied before every logarithm in the losses.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        k: NodeId,
        geom: ConvGeom,
        n: usize,
        f: usize,
    },
    AddChannelBias(NodeId, NodeId),
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Unary(NodeId, Unary),
    Binary(NodeId, NodeId, Binary),
    Scale(NodeId, T),
    Softmax(NodeId),
    Reshape(NodeId),
    ConcatChannels(Vec<NodeId>),
    Sum(NodeId),
    Mean(NodeId),
    CrossEntropy {
        probs: NodeId,
        labels: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    NegLogSigmoid(NodeId),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run computation graph.
///
/// Nodes are appended in evaluation order, so every input of a node precedes
/// it and the append order is a topological order. A graph is rebuilt for
/// every forward pass and is not shared between threads.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    root: Option<NodeId>,
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    p.max(T::of(PROB_CLAMP)).min(T::of(1.0 - PROB_CLAMP))
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Dimension(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Contract(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            root: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId], name: &str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Adds a leaf holding a copy of `t`; it takes part in differentiation
    /// when `requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> NodeId {
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        self.leaf_owned(value, requires_grad)
    }

    pub fn leaf_owned(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.leaf_owned(t, false)
    }

    /// Differentiable leaf; its gradient is readable after [`Self::backward`].
    pub fn param(&mut self, t: &Tensor<T>) -> NodeId {
        self.leaf(t, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.data()[0]
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// Adds a length-M bias to every row of an N×M node.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xs, bs) = (self.shape(x), self.shape(bias));
        if xs.len() != 2 || bs != [xs[1]] {
            return Err(Error::Dimension(format!(
                "row bias {bs:?} does not match {xs:?}"
            )));
        }
        let m = xs[1];
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m) {
            row.iter_mut().zip(&b).for_each(|(v, &b)| *v += b);
        }
        let out = Tensor::from_parts(xs.to_vec(), out);
        self.push(out, Op::AddRowBias(x, bias), &[x, bias], "add_row_bias")
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let (n, f, geom) = ConvGeom::new(self.shape(x), self.shape(k), stride, padding)?;
        let out = ops::conv2d_raw(n, f, &geom, self.value(x).data(), self.value(k).data());
        let out = Tensor::from_parts(vec![n, f, geom.ho, geom.wo], out);
        self.push(out, Op::Conv2d { x, k, geom, n, f }, &[x, k], "conv2d")
    }

    /// Adds a per-channel bias to an N×C×H×W node.
    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xs, bs) = (self.shape(x).to_vec(), self.shape(bias));
        if xs.len() != 4 || bs != [xs[1]] {
            return Err(Error::Dimension(format!(
                "channel bias {bs:?} does not match {xs:?}"
            )));
        }
        let plane = xs[2] * xs[3];
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bc = b[i % xs[1]];
            chunk.iter_mut().for_each(|v| *v += bc);
        }
        let out = Tensor::from_parts(xs, out);
        self.push(out, Op::AddChannelBias(x, bias), &[x, bias], "add_channel_bias")
    }

    pub fn maxpool2d(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let (out, argmax) = ops::maxpool2d(self.value(x), size)?;
        self.push(out, Op::MaxPool { x, argmax }, &[x], "maxpool2d")
    }

    pub fn unary(&mut self, x: NodeId, kind: Unary) -> Result<NodeId> {
        let out = ops::unary(kind, self.value(x))?;
        self.push(out, Op::Unary(x, kind), &[x], kind.name())
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn binary(&mut self, a: NodeId, b: NodeId, kind: Binary) -> Result<NodeId> {
        let out = ops::binary(kind, self.value(a), self.value(b))?;
        self.push(out, Op::Binary(a, b, kind), &[a, b], "elementwise")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Binary::Add)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> Result<NodeId> {
        let out = ops::scale(self.value(x), factor)?;
        self.push(out, Op::Scale(x, factor), &[x], "scale")
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let out = ops::softmax(self.value(x))?;
        self.push(out, Op::Softmax(x), &[x], "softmax")
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).reshape(shape)?;
        self.push(out, Op::Reshape(x), &[x], "reshape")
    }

    /// Flattens everything after the leading axis.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        let shape = [s[0], shape_len(&s[1..])];
        self.reshape(x, &shape)
    }

    /// Concatenates N×Cᵢ×H×W nodes along the channel axis.
    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = self.shape(*parts.first().ok_or_else(|| {
            Error::Contract("concat_channels of zero nodes".into())
        })?)
        .to_vec();
        if first.len() != 4 {
            return Err(Error::Dimension(format!(
                "concat_channels needs [N,C,H,W], got {first:?}"
            )));
        }
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 4 || s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::Dimension(format!(
                    "cannot concatenate channels of {first:?} and {s:?}"
                )));
            }
            channels += s[1];
        }
        let plane = first[2] * first[3];
        let mut out = Vec::with_capacity(first[0] * channels * plane);
        for s in 0..first[0] {
            for &p in parts {
                out.extend_from_slice(self.value(p).item(s));
            }
        }
        let shape = vec![first[0], channels, first[2], first[3]];
        let out = Tensor::from_parts(shape, out);
        self.push(out, Op::ConcatChannels(parts.to_vec()), parts, "concat_channels")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let out = Tensor::scalar(self.value(x).mean());
        self.push(out, Op::Mean(x), &[x], "mean")
    }

    /// Mean of `−ln clamp(probs[i, labels[i]])` over the batch.
    pub fn cross_entropy(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        let s = self.shape(probs).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "cross_entropy needs [N,K] probabilities, got {s:?}"
            )));
        }
        check_labels(labels, s[0], s[1])?;
        let p = self.value(probs).data();
        let total: T = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -clamp_prob(p[i * s[1] + l]).ln())
            .sum();
        let out = Tensor::scalar(total / T::of(s[0] as f64));
        let op = Op::CrossEntropy {
            probs,
            labels: labels.to_vec(),
        };
        self.push(out, op, &[probs], "cross_entropy")
    }

    /// Cross entropy of `softmax(logits)`, fused.
    ///
    /// The value equals `cross_entropy(softmax(logits))` including the clamp;
    /// the gradient is the exact `(p − onehot)/N` of the unclamped loss, so it
    /// stays informative for confidently classified samples.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[1] < 2 {
            return Err(Error::Dimension(format!(
                "softmax_cross_entropy needs [N,K] logits with K >= 2, got {s:?}"
            )));
        }
        check_labels(labels, s[0], s[1])?;
        let mut probs = self.value(logits).data().to_vec();
        for row in probs.chunks_mut(s[1]) {
            ops::softmax_in_place(row);
        }
        let total: T = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -clamp_prob(probs[i * s[1] + l]).ln())
            .sum();
        let out = Tensor::scalar(total / T::of(s[0] as f64));
        let op = Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push(out, op, &[logits], "softmax_cross_entropy")
    }

    /// Mean of `−ln clamp(σ(x))` over all elements, fused.
    ///
    /// With `x` a discriminator logit this is `−mean(ln D)`; applied to `−x`
    /// it is `−mean(ln(1 − D))`. The gradient is the exact `−σ(−x)/n` of the
    /// unclamped expression.
    pub fn neg_log_sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let total: T = v
            .data()
            .iter()
            .map(|&z| -clamp_prob(ops::sigmoid(z)).ln())
            .sum();
        let out = Tensor::scalar(total / T::of(v.len() as f64));
        self.push(out, Op::NegLogSigmoid(x), &[x], "neg_log_sigmoid")
    }

    /// Reverse sweep from the scalar `root`, replacing any gradients from a
    /// previous sweep. Gradients from fan-out are summed.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        self.root = Some(root);
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        if grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backward".into()));
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward root with respect to `id`, if `id`
    /// requires grad and is reachable from the root.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    /// Fingerprint of the active pieces of every piecewise-linear node: the
    /// sign of each `relu`/`leaky_relu` input and each pooling argmax. Two
    /// evaluations with equal fingerprints lie on the same linear piece.
    pub fn piecewise_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| h = (h ^ v).wrapping_mul(0x0000_0100_0000_01b3);
        for node in &self.nodes {
            match &node.op {
                Op::Unary(x, Unary::Relu | Unary::LeakyRelu(_)) => {
                    for &v in self.nodes[x.0].value.data() {
                        mix(u64::from(v > T::zero()));
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64)),
                _ => {}
            }
        }
        h
    }

    /// Adds the gradient held for `id` into `target`'s gradient buffer.
    /// Unreached parameters receive zeros.
    pub fn write_grad(&self, id: NodeId, target: &mut Tensor<T>) -> Result<()> {
        match self.grad(id) {
            Some(g) => target.accumulate_grad(g),
            None => target.accumulate_grad(&vec![T::zero(); target.len()]),
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut [T] {
            grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
        }
        let len = |id: NodeId| self.nodes[id.0].value.len();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs(*a) {
                    let da = acc(grads, *a, len(*a));
                    gemm(m, n, k, g, false, bv.data(), true, da, true);
                }
                if needs(*b) {
                    let db = acc(grads, *b, len(*b));
                    gemm(k, m, n, av.data(), true, g, false, db, true);
                }
            }
            Op::AddRowBias(x, b) => {
                if needs(*x) {
                    add_into(acc(grads, *x, len(*x)), g);
                }
                if needs(*b) {
                    let m = len(*b);
                    let db = acc(grads, *b, m);
                    for row in g.chunks(m) {
                        add_into(db, row);
                    }
                }
            }
            Op::Conv2d { x, k, geom, n, f } => {
                let (xv, kv) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
                let (pl, ol) = (geom.patch_len(), geom.out_len());
                let in_len = geom.c * geom.h * geom.w;
                let mut cols = vec![T::zero(); pl * ol];
                let mut dcols = vec![T::zero(); pl * ol];
                for s in 0..*n {
                    let gs = &g[s * f * ol..(s + 1) * f * ol];
                    if needs(*k) {
                        geom.im2col(&xv.data()[s * in_len..(s + 1) * in_len], &mut cols);
                        let dk = acc(grads, *k, len(*k));
                        gemm(*f, ol, pl, gs, false, &cols, true, dk, true);
                    }
                    if needs(*x) {
                        gemm(pl, *f, ol, kv.data(), true, gs, false, &mut dcols, false);
                        let dx = acc(grads, *x, len(*x));
                        geom.col2im_add(&dcols, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
            }
            Op::AddChannelBias(x, b) => {
                if needs(*x) {
                    add_into(acc(grads, *x, len(*x)), g);
                }
                if needs(*b) {
                    let s = self.nodes[x.0].value.shape();
                    let (c, plane) = (s[1], s[2] * s[3]);
                    let db = acc(grads, *b, c);
                    for (i, chunk) in g.chunks(plane).enumerate() {
                        db[i % c] += chunk.iter().copied().sum::<T>();
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if needs(*x) {
                    let dx = acc(grads, *x, len(*x));
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src] += gv;
                    }
                }
            }
            Op::Unary(x, kind) => {
                if needs(*x) {
                    let xv = self.nodes[x.0].value.data();
                    let yv = node.value.data();
                    let dx = acc(grads, *x, len(*x));
                    for (((d, &gv), &xi), &yi) in dx.iter_mut().zip(g).zip(xv).zip(yv) {
                        *d += gv * kind.derivative(xi, yi);
                    }
                }
            }
            Op::Binary(a, b, kind) => {
                let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                match kind {
                    Binary::Add => {
                        if needs(*a) {
                            add_into(acc(grads, *a, av.len()), g);
                        }
                        if needs(*b) {
                            add_into(acc(grads, *b, bv.len()), g);
                        }
                    }
                    Binary::Mul => {
                        if needs(*a) {
                            let da = acc(grads, *a, av.len());
                            for ((d, &gv), &o) in da.iter_mut().zip(g).zip(bv) {
                                *d += gv * o;
                            }
                        }
                        if needs(*b) {
                            let db = acc(grads, *b, bv.len());
                            for ((d, &gv), &o) in db.iter_mut().zip(g).zip(av) {
                                *d += gv * o;
                            }
                        }
                    }
                }
            }
            Op::Scale(x, factor) => {
                if needs(*x) {
                    let dx = acc(grads, *x, len(*x));
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv * *factor;
                    }
                }
            }
            Op::Softmax(x) => {
                if needs(*x) {
                    let k = node.value.shape()[1];
                    let y = node.value.data();
                    let dx = acc(grads, *x, len(*x));
                    for ((dr, gr), yr) in dx.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if needs(*x) {
                    add_into(acc(grads, *x, len(*x)), g);
                }
            }
            Op::ConcatChannels(parts) => {
                let s = node.value.shape();
                let out_item = shape_len(&s[1..]);
                let mut offset = 0;
                for &p in parts {
                    let item = self.nodes[p.0].value.item_len();
                    if needs(p) {
                        let dp = acc(grads, p, len(p));
                        for smp in 0..s[0] {
                            let src = &g[smp * out_item + offset..][..item];
                            add_into(&mut dp[smp * item..(smp + 1) * item], src);
                        }
                    }
                    offset += item;
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    acc(grads, *x, len(*x)).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if needs(*x) {
                    let n = len(*x);
                    let share = g[0] / T::of(n as f64);
                    acc(grads, *x, n).iter_mut().for_each(|d| *d += share);
                }
            }
            Op::CrossEntropy { probs, labels } => {
                if needs(*probs) {
                    let pv = &self.nodes[probs.0].value;
                    let k = pv.shape()[1];
                    let n = T::of(labels.len() as f64);
                    let (lo, hi) = (T::of(PROB_CLAMP), T::of(1.0 - PROB_CLAMP));
                    let p = pv.data().to_vec();
                    let dp = acc(grads, *probs, p.len());
                    for (i, &l) in labels.iter().enumerate() {
                        let v = p[i * k + l];
                        if v >= lo && v <= hi {
                            dp[i * k + l] -= g[0] / (n * v);
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if needs(*logits) {
                    let k = self.nodes[logits.0].value.shape()[1];
                    let share = g[0] / T::of(labels.len() as f64);
                    let dl = acc(grads, *logits, probs.len());
                    for (i, &l) in labels.iter().enumerate() {
                        let row = &probs[i * k..(i + 1) * k];
                        let drow = &mut dl[i * k..(i + 1) * k];
                        let mut others = T::zero();
                        for j in 0..k {
                            if j != l {
                                drow[j] += share * row[j];
                                others += row[j];
                            }
                        }
                        // 1 − p_l without cancellation.
                        drow[l] -= share * others;
                    }
                }
            }
            Op::NegLogSigmoid(x) => {
                if needs(*x) {
                    let xv = self.nodes[x.0].value.data();
                    let share = g[0] / T::of(xv.len() as f64);
                    let dx = acc(grads, *x, xv.len());
                    for (d, &z) in dx.iter_mut().zip(xv) {
                        *d -= share * ops::sigmoid(-z);
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(&Tensor::from_f64(&[2, 3], &[1., -2., 3., 0.5, 0., 9.]).unwrap());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::<f64>::new();
        let w = g.param(&Tensor::scalar(0.0));
        let y = g.sigmoid(w).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[0.25]);
    }

    #[test]
    fn non_scalar_root_is_a_contract_error() {
        let mut g = Graph::<f64>::new();
        let x = g.param(&Tensor::zeros(&[3]));
        let y = g.relu(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_gradients_add() {
        // f(x) = sum(x * x) + sum(3x) → df/dx = 2x + 3
        let mut g = Graph::<f64>::new();
        let x = g.param(&Tensor::from_f64(&[3], &[1., 2., -4.]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let a = g.sum(sq).unwrap();
        let t = g.scale(x, 3.0).unwrap();
        let b = g.sum(t).unwrap();
        let f = g.add(a, b).unwrap();
        g.backward(f).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[5., 7., -5.]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.input(Tensor::filled(&[2], 2.0));
        let p = g.param(&Tensor::filled(&[2], 3.0));
        let y = g.mul(c, p).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(p).unwrap(), &[2., 2.]);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut g = Graph::<f64>::new();
        let p = g.input(Tensor::from_rows(&[&[0.5, 0.5]]).unwrap());
        assert!(matches!(g.cross_entropy(p, &[2]), Err(Error::Contract(_))));
    }

    #[test]
    fn fused_softmax_ce_matches_composed_value() {
        let mut g = Graph::<f64>::new();
        let l = g.param(&Tensor::from_rows(&[&[0.3, -1.2, 2.0], &[0.0, 0.1, 0.2]]).unwrap());
        let fused = g.softmax_cross_entropy(l, &[2, 0]).unwrap();
        let p = g.softmax(l).unwrap();
        let composed = g.cross_entropy(p, &[2, 0]).unwrap();
        assert!((g.scalar(fused) - g.scalar(composed)).abs() < 1e-15);
    }
}
