//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only arena of nodes; every operation records its
//! parents, so insertion order is already a topological order. `backward`
//! walks the arena once in reverse, accumulating gradients into leaves.
//!
//! Conventions:
//! * A graph is confined to one thread and rebuilt per training step.
//! * Node values are immutable once created.
//! * Leaf gradients persist across `backward` calls and therefore
//!   accumulate; callers that want fresh gradients reset with
//!   [`Graph::zero_grads`] first (the training pipeline always does).
//! * The primitive set is fixed to: matmul, add, mul, sub, broadcast,
//!   transpose, reshape, concat, slice, softmax, layer-norm, gelu, mean,
//!   sum, mse, cross-entropy, cosine-similarity. Everything else in the
//!   crate is composed from these.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{op}: dimension mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}

type Result<T> = std::result::Result<T, GraphError>;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Broadcast(NodeId),
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice {
        src: NodeId,
        axis: usize,
        start: usize,
    },
    Softmax { src: NodeId, axis: usize },
    LayerNorm { src: NodeId, eps: f64 },
    Gelu(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Mse(NodeId, NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
    },
    CosineSim(NodeId, NodeId),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op,
    requires_grad: bool,
    /// Persistent leaf gradient; `None` until first touched by backward.
    grad: Option<Tensor<S>>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient of a leaf (or any node touched by backward).
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires_any(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient is tracked through it.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<S>, trainable: bool) -> NodeId {
        self.push(value, Op::Leaf, trainable)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(S::from_f64(v)))
    }

    // ---- elementwise ----

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(GraphError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(data, Op::Add(a, b), self.requires_any(&[a, b])))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(data, Op::Sub(a, b), self.requires_any(&[a, b])))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(data, Op::Mul(a, b), self.requires_any(&[a, b])))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        // i-k-j order; zero entries of the left operand are skipped, which
        // makes one-hot selection matrices cheap.
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (l, &x) in arow.iter().enumerate() {
                if x == S::zero() {
                    continue;
                }
                let brow = &bv[l * n..(l + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow.iter()) {
                    *o = *o + x * y;
                }
            }
        }
        let t = Tensor::from_vec(&[m, n], out).expect("matmul shape");
        Ok(self.push(t, Op::Matmul(a, b), self.requires_any(&[a, b])))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(GraphError::Invalid {
                op: "transpose",
                msg: format!("expected 2-D tensor, got shape {s:?}"),
            });
        }
        let (m, n) = (s[0], s[1]);
        let v = self.value(a).data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let t = Tensor::from_vec(&[n, m], out).expect("transpose shape");
        Ok(self.push(t, Op::Transpose(a), self.requires_any(&[a])))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() {
            return Err(GraphError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let t = Tensor::from_vec(shape, self.value(a).data().to_vec()).expect("reshape");
        Ok(self.push(t, Op::Reshape(a), self.requires_any(&[a])))
    }

    /// Broadcast to `shape` with right-aligned dimensions; every source
    /// dimension must equal the target dimension or be 1.
    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let src = self.shape(a).to_vec();
        if !broadcast_ok(&src, shape) {
            return Err(GraphError::ShapeMismatch {
                op: "broadcast",
                lhs: src,
                rhs: shape.to_vec(),
            });
        }
        let data = bcast_expand(self.value(a), shape);
        let t = Tensor::from_vec(shape, data).expect("broadcast shape");
        Ok(self.push(t, Op::Broadcast(a), self.requires_any(&[a])))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(GraphError::Invalid {
                op: "concat",
                msg: "no inputs".into(),
            });
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(GraphError::Invalid {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {first:?}"),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(first.iter())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(GraphError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![S::zero(); shape.iter().product()];
        let row = axis_total * inner;
        let mut offset = 0;
        for &p in parts {
            let pa = self.shape(p)[axis];
            let v = self.value(p).data();
            for o in 0..outer {
                let src = &v[o * pa * inner..(o + 1) * pa * inner];
                let dst = &mut out[o * row + offset..o * row + offset + pa * inner];
                dst.copy_from_slice(src);
            }
            offset += pa * inner;
        }
        let t = Tensor::from_vec(&shape, out).expect("concat shape");
        let rg = self.requires_any(parts);
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, src: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(src).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(GraphError::Invalid {
                op: "slice",
                msg: format!("range {start}..{} on axis {axis} of shape {s:?}", start + len),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut shape = s.clone();
        shape[axis] = len;
        let v = self.value(src).data();
        let mut out = vec![S::zero(); outer * len * inner];
        for o in 0..outer {
            let from = (o * s[axis] + start) * inner;
            out[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&v[from..from + len * inner]);
        }
        let t = Tensor::from_vec(&shape, out).expect("slice shape");
        Ok(self.push(t, Op::Slice { src, axis, start }, self.requires_any(&[src])))
    }

    // ---- nonlinearities ----

    pub fn softmax(&mut self, src: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.shape(src).to_vec();
        if axis >= s.len() {
            return Err(GraphError::Invalid {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {s:?}"),
            });
        }
        let v = self.value(src).data();
        let mut out = vec![S::zero(); v.len()];
        for_each_lane(&s, axis, |lane| {
            let mut max = S::neg_infinity();
            for &i in lane {
                if v[i] > max {
                    max = v[i];
                }
            }
            let mut total = S::zero();
            for &i in lane {
                let e = (v[i] - max).exp();
                out[i] = e;
                total = total + e;
            }
            for &i in lane {
                out[i] = out[i] / total;
            }
        });
        let t = Tensor::from_vec(&s, out).expect("softmax shape");
        Ok(self.push(t, Op::Softmax { src, axis }, self.requires_any(&[src])))
    }

    /// Normalize the last axis to zero mean and unit variance (biased
    /// variance estimate). Affine scale/shift is composed separately.
    pub fn layer_norm(&mut self, src: NodeId, eps: f64) -> Result<NodeId> {
        let s = self.shape(src).to_vec();
        if s.is_empty() || *s.last().unwrap() == 0 {
            return Err(GraphError::Invalid {
                op: "layer_norm",
                msg: format!("cannot normalize shape {s:?}"),
            });
        }
        let n = *s.last().unwrap();
        let v = self.value(src).data();
        let mut out = vec![S::zero(); v.len()];
        let epss = S::from_f64(eps);
        for row in 0..v.len() / n {
            let x = &v[row * n..(row + 1) * n];
            let (mu, var) = row_stats(x);
            let inv = S::one() / (var + epss).sqrt();
            for (o, &xi) in out[row * n..(row + 1) * n].iter_mut().zip(x.iter()) {
                *o = (xi - mu) * inv;
            }
        }
        let t = Tensor::from_vec(&s, out).expect("layer_norm shape");
        Ok(self.push(t, Op::LayerNorm { src, eps }, self.requires_any(&[src])))
    }

    /// Smooth gelu (tanh form).
    pub fn gelu(&mut self, src: NodeId) -> Result<NodeId> {
        let t = self.value(src).map(|x| gelu_forward(x));
        Ok(self.push(t, Op::Gelu(src), self.requires_any(&[src])))
    }

    // ---- reductions ----

    pub fn sum(&mut self, src: NodeId) -> Result<NodeId> {
        let mut total = S::zero();
        for &x in self.value(src).data() {
            total = total + x;
        }
        Ok(self.push(Tensor::scalar(total), Op::Sum(src), self.requires_any(&[src])))
    }

    pub fn mean(&mut self, src: NodeId) -> Result<NodeId> {
        let n = self.value(src).numel();
        if n == 0 {
            return Err(GraphError::Invalid {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let mut total = S::zero();
        for &x in self.value(src).data() {
            total = total + x;
        }
        let t = Tensor::scalar(total / S::from_f64(n as f64));
        Ok(self.push(t, Op::Mean(src), self.requires_any(&[src])))
    }

    /// Mean squared error over all elements (scalar).
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mse", a, b)?;
        let n = self.value(a).numel();
        if n == 0 {
            return Err(GraphError::Invalid {
                op: "mse",
                msg: "empty tensor".into(),
            });
        }
        let mut total = S::zero();
        for (&x, &y) in self.value(a).data().iter().zip(self.value(b).data()) {
            let d = x - y;
            total = total + d * d;
        }
        let t = Tensor::scalar(total / S::from_f64(n as f64));
        Ok(self.push(t, Op::Mse(a, b), self.requires_any(&[a, b])))
    }

    /// Summed cross-entropy of row-wise logits against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 {
            return Err(GraphError::Invalid {
                op: "cross_entropy",
                msg: format!("expected 2-D logits, got shape {s:?}"),
            });
        }
        let (rows, classes) = (s[0], s[1]);
        if targets.len() != rows {
            return Err(GraphError::Invalid {
                op: "cross_entropy",
                msg: format!("{rows} logit rows but {} targets", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(GraphError::Invalid {
                op: "cross_entropy",
                msg: format!("target {bad} out of range for {classes} classes"),
            });
        }
        let v = self.value(logits).data();
        let mut total = S::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = &v[r * classes..(r + 1) * classes];
            total = total + (log_sum_exp(row) - row[t]);
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            self.requires_any(&[logits]),
        ))
    }

    /// Cosine similarity of two tensors flattened to vectors (scalar).
    pub fn cosine_sim(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(GraphError::ShapeMismatch {
                op: "cosine_sim",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let (dot, na, nb) = dot_and_norms(av, bv);
        if na == S::zero() || nb == S::zero() {
            return Err(GraphError::Invalid {
                op: "cosine_sim",
                msg: "zero-norm input".into(),
            });
        }
        let t = Tensor::scalar(dot / (na * nb));
        Ok(self.push(t, Op::CosineSim(a, b), self.requires_any(&[a, b])))
    }

    // ---- composed helpers ----

    /// Multiply by a constant scalar (composed from broadcast + mul).
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        let k = self.scalar_const(c);
        let k = self.broadcast_to(k, &shape)?;
        self.mul(a, k)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.scale(a, -1.0)
    }

    /// `x @ w + b` with the bias row broadcast over rows; `b` is optional.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => {
                let shape = self.shape(y).to_vec();
                let bb = self.broadcast_to(b, &shape)?;
                self.add(y, bb)
            }
            None => Ok(y),
        }
    }

    /// Sum of squared elements (scalar).
    pub fn sq_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let sq = self.mul(a, a)?;
        self.sum(sq)
    }

    // ---- backward ----

    /// Accumulate `∂root/∂leaf` into every trainable leaf reachable from
    /// `root`. `root` must be a scalar. Repeated calls keep accumulating
    /// until [`Graph::zero_grads`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(GraphError::NonScalarRoot(self.shape(root).to_vec()));
        }
        let mut pending: Vec<Option<Tensor<S>>> = Vec::with_capacity(root.0 + 1);
        pending.resize_with(root.0 + 1, || None);
        pending[root.0] = Some(Tensor::scalar(S::one()));

        for i in (0..=root.0).rev() {
            let g = match pending[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                accumulate(&mut self.nodes[i].grad, &g);
                continue;
            }
            self.backprop_one(i, &g, &mut pending);
        }
        Ok(())
    }

    fn backprop_one(&self, i: usize, g: &Tensor<S>, pending: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[i];
        let mut send = |id: NodeId, contrib: Tensor<S>| {
            if self.nodes[id.0].requires_grad {
                accumulate(&mut pending[id.0], &contrib);
            }
        };
        match &node.op {
            Op::Leaf => unreachable!("leaf handled by backward"),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                send(*a, zip_map(g, self.value(*b), |x, y| x * y));
                send(*b, zip_map(g, self.value(*a), |x, y| x * y));
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let gv = g.data();
                if self.nodes[a.0].requires_grad {
                    // dA[i,l] = Σ_j g[i,j] · B[l,j]
                    let bv = self.value(*b).data();
                    let mut da = vec![S::zero(); m * k];
                    for i2 in 0..m {
                        let grow = &gv[i2 * n..(i2 + 1) * n];
                        let darow = &mut da[i2 * k..(i2 + 1) * k];
                        for l in 0..k {
                            let brow = &bv[l * n..(l + 1) * n];
                            let mut acc = S::zero();
                            for (&gx, &bx) in grow.iter().zip(brow.iter()) {
                                acc = acc + gx * bx;
                            }
                            darow[l] = acc;
                        }
                    }
                    send(*a, Tensor::from_vec(&[m, k], da).expect("matmul dA"));
                }
                if self.nodes[b.0].requires_grad {
                    // dB[l,j] = Σ_i A[i,l] · g[i,j]
                    let av = self.value(*a).data();
                    let mut db = vec![S::zero(); k * n];
                    for i2 in 0..m {
                        let grow = &gv[i2 * n..(i2 + 1) * n];
                        for l in 0..k {
                            let x = av[i2 * k + l];
                            if x == S::zero() {
                                continue;
                            }
                            let dbrow = &mut db[l * n..(l + 1) * n];
                            for (d, &gx) in dbrow.iter_mut().zip(grow.iter()) {
                                *d = *d + x * gx;
                            }
                        }
                    }
                    send(*b, Tensor::from_vec(&[k, n], db).expect("matmul dB"));
                }
            }
            Op::Transpose(a) => {
                let s = g.shape();
                let (m, n) = (s[0], s[1]);
                let gv = g.data();
                let mut out = vec![S::zero(); m * n];
                for i2 in 0..m {
                    for j in 0..n {
                        out[j * m + i2] = gv[i2 * n + j];
                    }
                }
                send(*a, Tensor::from_vec(&[n, m], out).expect("transpose grad"));
            }
            Op::Reshape(a) => {
                let t = Tensor::from_vec(self.shape(*a), g.data().to_vec()).expect("reshape grad");
                send(*a, t);
            }
            Op::Broadcast(a) => {
                let src_shape = self.shape(*a);
                let reduced = bcast_reduce(g, src_shape);
                send(*a, Tensor::from_vec(src_shape, reduced).expect("broadcast grad"));
            }
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let full = g.shape().to_vec();
                let outer: usize = full[..axis].iter().product();
                let inner: usize = full[axis + 1..].iter().product();
                let row = full[axis] * inner;
                let gv = g.data();
                let mut offset = 0;
                for &p in parts {
                    let pa = self.shape(p)[axis];
                    if self.nodes[p.0].requires_grad {
                        let mut part = vec![S::zero(); outer * pa * inner];
                        for o in 0..outer {
                            part[o * pa * inner..(o + 1) * pa * inner].copy_from_slice(
                                &gv[o * row + offset..o * row + offset + pa * inner],
                            );
                        }
                        send(p, Tensor::from_vec(self.shape(p), part).expect("concat grad"));
                    }
                    offset += pa * inner;
                }
            }
            Op::Slice { src, axis, start } => {
                let s = self.shape(*src).to_vec();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis + 1..].iter().product();
                let len = g.shape()[*axis];
                let gv = g.data();
                let mut out = vec![S::zero(); self.value(*src).numel()];
                for o in 0..outer {
                    let to = (o * s[*axis] + start) * inner;
                    out[to..to + len * inner]
                        .copy_from_slice(&gv[o * len * inner..(o + 1) * len * inner]);
                }
                send(*src, Tensor::from_vec(&s, out).expect("slice grad"));
            }
            Op::Softmax { src, axis } => {
                let y = node.value.data();
                let gv = g.data();
                let mut out = vec![S::zero(); y.len()];
                for_each_lane(node.value.shape(), *axis, |lane| {
                    let mut dot = S::zero();
                    for &idx in lane {
                        dot = dot + gv[idx] * y[idx];
                    }
                    for &idx in lane {
                        out[idx] = y[idx] * (gv[idx] - dot);
                    }
                });
                send(*src, Tensor::from_vec(node.value.shape(), out).expect("softmax grad"));
            }
            Op::LayerNorm { src, eps } => {
                let x = self.value(*src).data();
                let xhat = node.value.data();
                let gv = g.data();
                let shape = node.value.shape();
                let n = *shape.last().unwrap();
                let nn = S::from_f64(n as f64);
                let epss = S::from_f64(*eps);
                let mut out = vec![S::zero(); x.len()];
                for row in 0..x.len() / n {
                    let lo = row * n;
                    let (_, var) = row_stats(&x[lo..lo + n]);
                    let inv = S::one() / (var + epss).sqrt();
                    let mut gmean = S::zero();
                    let mut gxhat = S::zero();
                    for k in lo..lo + n {
                        gmean = gmean + gv[k];
                        gxhat = gxhat + gv[k] * xhat[k];
                    }
                    gmean = gmean / nn;
                    gxhat = gxhat / nn;
                    for k in lo..lo + n {
                        out[k] = inv * (gv[k] - gmean - xhat[k] * gxhat);
                    }
                }
                send(*src, Tensor::from_vec(shape, out).expect("layer_norm grad"));
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let t = zip_map(g, x, |gx, xv| gx * gelu_backward(xv));
                send(*a, t);
            }
            Op::Sum(a) => {
                let s = g.item();
                send(*a, Tensor::full(self.shape(*a), s));
            }
            Op::Mean(a) => {
                let n = S::from_f64(self.value(*a).numel() as f64);
                let s = g.item() / n;
                send(*a, Tensor::full(self.shape(*a), s));
            }
            Op::Mse(a, b) => {
                let n = S::from_f64(self.value(*a).numel() as f64);
                let c = g.item() * S::from_f64(2.0) / n;
                if self.nodes[a.0].requires_grad {
                    send(*a, zip_map(self.value(*a), self.value(*b), |x, y| c * (x - y)));
                }
                if self.nodes[b.0].requires_grad {
                    send(*b, zip_map(self.value(*a), self.value(*b), |x, y| -c * (x - y)));
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let s = self.shape(*logits).to_vec();
                let classes = s[1];
                let v = self.value(*logits).data();
                let gs = g.item();
                let mut out = vec![S::zero(); v.len()];
                for (r, &t) in targets.iter().enumerate() {
                    let row = &v[r * classes..(r + 1) * classes];
                    let lse = log_sum_exp(row);
                    for j in 0..classes {
                        let p = (row[j] - lse).exp();
                        let delta = if j == t { S::one() } else { S::zero() };
                        out[r * classes + j] = gs * (p - delta);
                    }
                }
                send(*logits, Tensor::from_vec(&s, out).expect("cross_entropy grad"));
            }
            Op::CosineSim(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let (dot, na, nb) = dot_and_norms(av, bv);
                let cosv = dot / (na * nb);
                let gs = g.item();
                if self.nodes[a.0].requires_grad {
                    let mut out = vec![S::zero(); av.len()];
                    for ((o, &x), &y) in out.iter_mut().zip(av).zip(bv) {
                        *o = gs * (y / (na * nb) - cosv * x / (na * na));
                    }
                    send(*a, Tensor::from_vec(self.shape(*a), out).expect("cosine grad"));
                }
                if self.nodes[b.0].requires_grad {
                    let mut out = vec![S::zero(); bv.len()];
                    for ((o, &y), &x) in out.iter_mut().zip(bv).zip(av) {
                        *o = gs * (x / (na * nb) - cosv * y / (nb * nb));
                    }
                    send(*b, Tensor::from_vec(self.shape(*b), out).expect("cosine grad"));
                }
            }
        }
    }
}

// ---- shared kernels ----

fn zip_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data).expect("zip_map shape")
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, g: &Tensor<S>) {
    match slot {
        Some(t) => {
            debug_assert_eq!(t.shape(), g.shape());
            for (d, &x) in t.data_mut().iter_mut().zip(g.data()) {
                *d = *d + x;
            }
        }
        None => *slot = Some(g.clone()),
    }
}

fn row_stats<S: Scalar>(x: &[S]) -> (S, S) {
    let n = S::from_f64(x.len() as f64);
    let mut mu = S::zero();
    for &v in x {
        mu = mu + v;
    }
    mu = mu / n;
    let mut var = S::zero();
    for &v in x {
        let d = v - mu;
        var = var + d * d;
    }
    (mu, var / n)
}

fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let mut max = S::neg_infinity();
    for &v in row {
        if v > max {
            max = v;
        }
    }
    let mut total = S::zero();
    for &v in row {
        total = total + (v - max).exp();
    }
    max + total.ln()
}

fn dot_and_norms<S: Scalar>(a: &[S], b: &[S]) -> (S, S, S) {
    let (mut dot, mut na, mut nb) = (S::zero(), S::zero(), S::zero());
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    (dot, na.sqrt(), nb.sqrt())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu_forward<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let k = S::from_f64(GELU_K);
    let half = S::from_f64(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (S::one() + u.tanh())
}

fn gelu_backward<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let k = S::from_f64(GELU_K);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = S::one() - t * t;
    half * (S::one() + t) + half * x * sech2 * c * (S::one() + three * k * x * x)
}

fn broadcast_ok(src: &[usize], dst: &[usize]) -> bool {
    if src.len() > dst.len() {
        return false;
    }
    let offset = dst.len() - src.len();
    src.iter()
        .zip(dst[offset..].iter())
        .all(|(&s, &d)| s == d || s == 1)
}

/// Map a destination coordinate (linear, row-major) to the source index it
/// reads from under right-aligned broadcasting.
fn bcast_src_index(dst_idx: usize, dst: &[usize], src: &[usize]) -> usize {
    let offset = dst.len() - src.len();
    let mut rem = dst_idx;
    let mut src_idx = 0;
    let mut src_stride = 1;
    // Walk dims from the innermost outward, building the source index.
    let mut strides_done = vec![0usize; src.len()];
    for d in (0..dst.len()).rev() {
        let coord = rem % dst[d];
        rem /= dst[d];
        if d >= offset {
            let sd = d - offset;
            let sc = if src[sd] == 1 { 0 } else { coord };
            strides_done[sd] = sc;
        }
    }
    for (sd, &dimension) in src.iter().enumerate().rev() {
        src_idx += strides_done[sd] * src_stride;
        src_stride *= dimension;
    }
    src_idx
}

fn bcast_expand<S: Scalar>(src: &Tensor<S>, dst_shape: &[usize]) -> Vec<S> {
    let n: usize = dst_shape.iter().product();
    let sv = src.data();
    let ss = src.shape();
    (0..n).map(|i| sv[bcast_src_index(i, dst_shape, ss)]).collect()
}

fn bcast_reduce<S: Scalar>(g: &Tensor<S>, src_shape: &[usize]) -> Vec<S> {
    let mut out = vec![S::zero(); src_shape.iter().product()];
    let gv = g.data();
    let gs = g.shape();
    for (i, &gx) in gv.iter().enumerate() {
        let si = bcast_src_index(i, gs, src_shape);
        out[si] = out[si] + gx;
    }
    out
}

/// Invoke `f` with the flat indices of every lane along `axis`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    let axis_n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut lane = vec![0usize; axis_n];
    for o in 0..outer {
        for i in 0..inner {
            for (k, slot) in lane.iter_mut().enumerate() {
                *slot = (o * axis_n + k) * inner + i;
            }
            f(&lane);
        }
    }
}
