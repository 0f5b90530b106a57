//! Recorded-computation reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every primitive appends one node holding its
//! forward value and enough information to replay its adjoint. Calling
//! [`Graph::backward`] walks the tape in exact reverse recording order and
//! accumulates gradients into the [`ParamSet`] the parameters came from.

use std::cell::RefCell;

use crate::error::{Error, Result};

use super::param::{ParamId, ParamSet};
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

const NO_INDEX: usize = usize::MAX;

/// Probability clipping used by the cross-entropy losses.
pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Vec<T>),
    RowScale(NodeId, Vec<T>),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Stack(Vec<NodeId>),
    MaxOverAxis {
        x: NodeId,
        argmax: Vec<usize>,
    },
    MeanOverAxis {
        x: NodeId,
        axis: usize,
        counts: Vec<usize>,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Select {
        x: NodeId,
        axis: usize,
        index: usize,
    },
    Reshape(NodeId),
    Gather {
        table: ParamId,
        ids: Vec<usize>,
        skip_row: Option<usize>,
    },
    WeightedSum {
        weights: NodeId,
        values: NodeId,
    },
    Sum(NodeId),
    CategoricalCrossEntropy {
        probs: NodeId,
        target: Vec<T>,
    },
    BinaryCrossEntropy {
        probs: NodeId,
        target: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::RowScale(..) => "row_scale",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Concat { .. } => "concat",
            Op::Stack(_) => "stack",
            Op::MaxOverAxis { .. } => "max_over_axis",
            Op::MeanOverAxis { .. } => "mean_over_axis",
            Op::Slice { .. } => "slice",
            Op::Select { .. } => "select",
            Op::Reshape(_) => "reshape",
            Op::Gather { .. } => "embedding_gather",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Sum(_) => "sum",
            Op::CategoricalCrossEntropy { .. } => "categorical_cross_entropy",
            Op::BinaryCrossEntropy { .. } => "binary_cross_entropy",
        }
    }
}

thread_local! {
    static ADJOINT_FAULT: RefCell<Option<String>> = const { RefCell::new(None) };
}

/// Test hook: while set, the adjoint of the named primitive (e.g. `"tanh"`)
/// is doubled on graphs run by the current thread. Pass `None` to clear.
#[doc(hidden)]
pub fn inject_adjoint_fault(op: Option<&str>) {
    ADJOINT_FAULT.with(|f| *f.borrow_mut() = op.map(str::to_owned));
}

fn active_fault() -> Option<String> {
    ADJOINT_FAULT.with(|f| f.borrow().clone())
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Splits `shape` around `axis` into (outer, axis_len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn drop_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

/// σ(z), held inside the open interval: saturated values are clamped to
/// the smallest positive and the largest below-one representable numbers.
#[inline]
fn stable_sigmoid<T: Scalar>(z: T) -> T {
    let s = if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    };
    let below_one = T::one() - T::epsilon() / (T::one() + T::one());
    s.max(T::min_positive_value()).min(below_one)
}

/// Recording tape of primitive operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn req(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Records a constant (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// Records a parameter leaf; gradients flow back into `params` on
    /// [`Graph::backward`] when the parameter is trainable.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> NodeId {
        let p = params.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.req(a) || self.req(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a + b`, where `b`'s shape must equal a trailing suffix of `a`'s
    /// shape (broadcast over leading axes).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape("add", format!("{sa:?} + {sb:?}")));
        }
        let bv = self.value(b).data();
        let bl = bv.len();
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % bl])
            .collect();
        let shape = sa.to_vec();
        let rg = self.req(a) || self.req(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a) || self.req(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a) || self.req(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant of the same length (masks).
    pub fn mul_const(&mut self, x: NodeId, factors: Vec<T>) -> Result<NodeId> {
        if factors.len() != self.value(x).len() {
            return Err(Error::shape(
                "mul_const",
                format!("{:?} vs {} factors", self.shape(x), factors.len()),
            ));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&factors)
            .map(|(&v, &f)| v * f)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.req(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::MulConst(x, factors), rg))
    }

    /// Scales row `i` (leading axis) by the constant `factors[i]`.
    pub fn row_scale(&mut self, x: NodeId, factors: Vec<T>) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if factors.len() != shape[0] {
            return Err(Error::shape(
                "row_scale",
                format!("{shape:?} vs {} factors", factors.len()),
            ));
        }
        let width = self.value(x).len() / shape[0];
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * factors[i / width])
            .collect();
        let rg = self.req(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::RowScale(x, factors), rg))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor::from_fn(v.shape(), |i| v.data()[i].tanh());
        let rg = self.req(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor::from_fn(v.shape(), |i| stable_sigmoid(v.data()[i]));
        let rg = self.req(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Softmax over the last axis, computed with max-subtraction.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.masked_softmax(x, None).expect("unmasked softmax cannot fail")
    }

    /// Softmax over the last axis where, for row `r` (all leading axes
    /// flattened), only the first `lengths[r]` positions participate.
    /// Excluded positions get probability zero; a row with no valid
    /// positions is all zeros.
    pub fn masked_softmax(&mut self, x: NodeId, lengths: Option<&[usize]>) -> Result<NodeId> {
        let v = self.value(x);
        let n = *v.shape().last().unwrap();
        let rows = v.len() / n;
        if let Some(l) = lengths {
            if l.len() != rows || l.iter().any(|&k| k > n) {
                return Err(Error::shape("softmax", format!("{:?} with lengths {l:?}", v.shape())));
            }
        }
        let mut out = vec![T::zero(); v.len()];
        for (r, (src, dst)) in v.data().chunks(n).zip(out.chunks_mut(n)).enumerate() {
            let valid = lengths.map_or(n, |l| l[r]);
            if valid == 0 {
                continue;
            }
            let max = src[..valid].iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut total = T::zero();
            for j in 0..valid {
                let e = (src[j] - max).exp();
                dst[j] = e;
                total += e;
            }
            for d in &mut dst[..valid] {
                *d /= total;
            }
        }
        let shape = v.shape().to_vec();
        let rg = self.req(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), rg))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = self
            .nodes
            .get(inputs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?.0)
            .unwrap()
            .value
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {first:?}")));
        }
        let mut axis_total = 0;
        for &id in inputs {
            let s = self.shape(id);
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{first:?} with {s:?}")));
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * first[axis + 1..].iter().product::<usize>());
        for o in 0..outer {
            for &id in inputs {
                let v = self.value(id);
                let chunk = v.len() / outer;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = axis_total;
        let rg = inputs.iter().any(|&i| self.req(i));
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Stacks `T` equally shaped `[B, ..]` tensors into `[B, T, ..]`.
    pub fn stack(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::shape("stack", "no inputs"))?)
            .to_vec();
        if inputs.iter().any(|&i| self.shape(i) != first.as_slice()) {
            return Err(Error::shape("stack", "inputs differ in shape"));
        }
        let b = first[0];
        let width: usize = first[1..].iter().product();
        let t = inputs.len();
        let mut data = vec![T::zero(); b * t * width];
        for (ti, &id) in inputs.iter().enumerate() {
            let src = self.value(id).data();
            for bi in 0..b {
                let dst = (bi * t + ti) * width;
                data[dst..dst + width].copy_from_slice(&src[bi * width..(bi + 1) * width]);
            }
        }
        let mut shape = vec![b, t];
        shape.extend_from_slice(&first[1..]);
        let rg = inputs.iter().any(|&i| self.req(i));
        Ok(self.push(Tensor::new(shape, data)?, Op::Stack(inputs.to_vec()), rg))
    }

    fn reduce_counts(&self, op: &'static str, x: NodeId, axis: usize, lengths: Option<&[usize]>) -> Result<Vec<usize>> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(Error::shape(op, format!("axis {axis} for {shape:?}")));
        }
        let (outer, n, _) = split_axis(shape, axis);
        match lengths {
            None => Ok(vec![n; outer]),
            Some(l) => {
                if axis == 0 || l.len() != shape[0] || l.iter().any(|&k| k > n) {
                    return Err(Error::shape(op, format!("lengths {l:?} for {shape:?} on axis {axis}")));
                }
                let per_lead = outer / shape[0];
                Ok((0..outer).map(|o| l[o / per_lead]).collect())
            }
        }
    }

    /// Maximum over `axis`. With `lengths` (requires `axis >= 1`), only the
    /// first `lengths[b]` entries along `axis` count for leading index `b`;
    /// an empty range yields zero.
    pub fn max_over_axis(&mut self, x: NodeId, axis: usize, lengths: Option<&[usize]>) -> Result<NodeId> {
        let counts = self.reduce_counts("max_over_axis", x, axis, lengths)?;
        let v = self.value(x);
        let (outer, n, inner) = split_axis(v.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = vec![NO_INDEX; outer * inner];
        let d = v.data();
        for o in 0..outer {
            for i in 0..inner {
                let mut best = T::neg_infinity();
                let mut best_idx = NO_INDEX;
                for j in 0..counts[o] {
                    let idx = (o * n + j) * inner + i;
                    if best_idx == NO_INDEX || d[idx] > best {
                        best = d[idx];
                        best_idx = idx;
                    }
                }
                if best_idx != NO_INDEX {
                    out[o * inner + i] = best;
                    argmax[o * inner + i] = best_idx;
                }
            }
        }
        let shape = drop_axis(v.shape(), axis);
        let rg = self.req(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxOverAxis { x, argmax }, rg))
    }

    /// Mean over `axis`, masked like [`Graph::max_over_axis`]; an empty
    /// range yields zero.
    pub fn mean_over_axis(&mut self, x: NodeId, axis: usize, lengths: Option<&[usize]>) -> Result<NodeId> {
        let counts = self.reduce_counts("mean_over_axis", x, axis, lengths)?;
        let v = self.value(x);
        let (outer, n, inner) = split_axis(v.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        let d = v.data();
        for o in 0..outer {
            if counts[o] == 0 {
                continue;
            }
            let denom = T::from_f64(counts[o] as f64);
            for i in 0..inner {
                let mut s = T::zero();
                for j in 0..counts[o] {
                    s += d[(o * n + j) * inner + i];
                }
                out[o * inner + i] = s / denom;
            }
        }
        let shape = drop_axis(v.shape(), axis);
        let rg = self.req(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MeanOverAxis { x, axis, counts }, rg))
    }

    /// Entries `start..start + len` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("{shape:?} axis {axis} range {start}..{}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.req(x);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Slice { x, axis, start }, rg))
    }

    /// Index `index` along `axis`, removing that axis.
    pub fn select(&mut self, x: NodeId, axis: usize, index: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || index >= shape[axis] {
            return Err(Error::shape("select", format!("{shape:?} axis {axis} index {index}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * n + index) * inner;
            data.extend_from_slice(&src[base..base + inner]);
        }
        let rg = self.req(x);
        Ok(self.push(
            Tensor::new(drop_axis(&shape, axis), data)?,
            Op::Select { x, axis, index },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.req(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Looks up rows of the parameter `table` (`[V, D]`) for `ids`,
    /// producing `prefix ++ [D]`. Row `skip_row` (padding) never receives
    /// gradient.
    pub fn embedding_gather(
        &mut self,
        params: &ParamSet<T>,
        table: ParamId,
        ids: &[usize],
        prefix: &[usize],
        skip_row: Option<usize>,
    ) -> Result<NodeId> {
        let p = params.get(table);
        let ts = p.value.shape();
        if ts.len() != 2 || prefix.iter().product::<usize>() != ids.len() || ids.is_empty() {
            return Err(Error::shape(
                "embedding_gather",
                format!("table {ts:?}, {} ids, prefix {prefix:?}", ids.len()),
            ));
        }
        let (vocab, dim) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape(
                "embedding_gather",
                format!("id {bad} out of range for table {ts:?}"),
            ));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(p.value.row(id));
        }
        let mut shape = prefix.to_vec();
        shape.push(dim);
        let rg = p.trainable;
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                skip_row,
            },
            rg,
        ))
    }

    /// `out[b, :] = Σ_t weights[b, t] · values[b, t, :]`.
    pub fn weighted_sum(&mut self, weights: NodeId, values: NodeId) -> Result<NodeId> {
        let (sw, sv) = (self.shape(weights), self.shape(values));
        if sw.len() != 2 || sv.len() != 3 || sw[0] != sv[0] || sw[1] != sv[1] {
            return Err(Error::shape("weighted_sum", format!("{sw:?} with {sv:?}")));
        }
        let (b, t, h) = (sv[0], sv[1], sv[2]);
        let w = self.value(weights).data();
        let v = self.value(values).data();
        let mut out = vec![T::zero(); b * h];
        for bi in 0..b {
            for ti in 0..t {
                let a = w[bi * t + ti];
                if a == T::zero() {
                    continue;
                }
                let row = &v[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                for (o, &x) in out[bi * h..(bi + 1) * h].iter_mut().zip(row) {
                    *o += a * x;
                }
            }
        }
        let rg = self.req(weights) || self.req(values);
        Ok(self.push(Tensor::new(vec![b, h], out)?, Op::WeightedSum { weights, values }, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.req(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    fn loss_target_check(&self, op: &'static str, probs: NodeId, target: &[T]) -> Result<(usize, usize)> {
        let s = self.shape(probs);
        if s.len() != 2 || target.len() != s[0] * s[1] {
            return Err(Error::shape(op, format!("probs {s:?}, {} targets", target.len())));
        }
        Ok((s[0], s[1]))
    }

    /// Batch-mean categorical cross-entropy; probabilities are clipped to
    /// `[PROB_CLIP, 1 - PROB_CLIP]`. Each target row must be one-hot.
    pub fn categorical_cross_entropy(&mut self, probs: NodeId, target: Vec<T>) -> Result<NodeId> {
        let (b, c) = self.loss_target_check("categorical_cross_entropy", probs, &target)?;
        for row in target.chunks(c) {
            let ones = row.iter().filter(|&&t| t == T::one()).count();
            let zeros = row.iter().filter(|&&t| t == T::zero()).count();
            if ones != 1 || zeros != c - 1 {
                return Err(Error::InvalidArgument(
                    "categorical cross-entropy target is not one-hot".into(),
                ));
            }
        }
        let (lo, hi) = clip_bounds::<T>();
        let p = self.value(probs).data();
        let mut total = T::zero();
        for (&pi, &ti) in p.iter().zip(&target) {
            if ti != T::zero() {
                total -= ti * pi.max(lo).min(hi).ln();
            }
        }
        let loss = total / T::from_f64(b as f64);
        let rg = self.req(probs);
        Ok(self.push(Tensor::scalar(loss), Op::CategoricalCrossEntropy { probs, target }, rg))
    }

    /// Mean over batch and classes of the per-class binary cross-entropy.
    pub fn binary_cross_entropy(&mut self, probs: NodeId, target: Vec<T>) -> Result<NodeId> {
        let (b, c) = self.loss_target_check("binary_cross_entropy", probs, &target)?;
        let (lo, hi) = clip_bounds::<T>();
        let p = self.value(probs).data();
        let mut total = T::zero();
        for (&pi, &ti) in p.iter().zip(&target) {
            let q = pi.max(lo).min(hi);
            total -= ti * q.ln() + (T::one() - ti) * (T::one() - q).ln();
        }
        let loss = total / T::from_f64((b * c) as f64);
        let rg = self.req(probs);
        Ok(self.push(Tensor::scalar(loss), Op::BinaryCrossEntropy { probs, target }, rg))
    }

    /// Reverse sweep from the scalar `loss`, accumulating `∂loss/∂θ` into
    /// every trainable parameter's gradient. Gradients are added to
    /// whatever is already stored; callers zero them between steps.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet<T>) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let fault = active_fault();
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(mut g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if fault.as_deref() == Some(node.op.name()) {
                g.iter_mut().for_each(|x| *x = *x + *x);
            }
            self.adjoint(idx, &g, &mut grads, params);
        }
        Ok(())
    }

    fn adjoint(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>], params: &mut ParamSet<T>) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Constant => {}
            Op::Param(pid) => {
                let p = params.get_mut(*pid);
                if p.trainable {
                    for (acc, &x) in p.gradient.data_mut().iter_mut().zip(g) {
                        *acc += x;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.req(*a) {
                    let buf = buffer(grads, *a, m * k);
                    T::gemm(m, n, k, g, false, self.value(*b).data(), true, buf, true);
                }
                if self.req(*b) {
                    let buf = buffer(grads, *b, k * n);
                    T::gemm(k, m, n, self.value(*a).data(), true, g, false, buf, true);
                }
            }
            Op::Add(a, b) => {
                if self.req(*a) {
                    accumulate(grads, *a, g);
                }
                if self.req(*b) {
                    let bl = self.value(*b).len();
                    let buf = buffer(grads, *b, bl);
                    for (i, &x) in g.iter().enumerate() {
                        buf[i % bl] += x;
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.req(*a) {
                    accumulate(grads, *a, g);
                }
                if self.req(*b) {
                    let buf = buffer(grads, *b, g.len());
                    for (acc, &x) in buf.iter_mut().zip(g) {
                        *acc -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.req(*a) {
                    let other = self.value(*b).data();
                    let buf = buffer(grads, *a, g.len());
                    for i in 0..g.len() {
                        buf[i] += g[i] * other[i];
                    }
                }
                if self.req(*b) {
                    let other = self.value(*a).data();
                    let buf = buffer(grads, *b, g.len());
                    for i in 0..g.len() {
                        buf[i] += g[i] * other[i];
                    }
                }
            }
            Op::MulConst(x, factors) => {
                let buf = buffer(grads, *x, g.len());
                for i in 0..g.len() {
                    buf[i] += g[i] * factors[i];
                }
            }
            Op::RowScale(x, factors) => {
                let width = g.len() / factors.len();
                let buf = buffer(grads, *x, g.len());
                for i in 0..g.len() {
                    buf[i] += g[i] * factors[i / width];
                }
            }
            Op::Tanh(x) => {
                let buf = buffer(grads, *x, g.len());
                for i in 0..g.len() {
                    buf[i] += g[i] * (T::one() - out[i] * out[i]);
                }
            }
            Op::Sigmoid(x) => {
                let buf = buffer(grads, *x, g.len());
                for i in 0..g.len() {
                    buf[i] += g[i] * out[i] * (T::one() - out[i]);
                }
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().unwrap();
                let buf = buffer(grads, *x, g.len());
                for ((p, gr), acc) in out.chunks(n).zip(g.chunks(n)).zip(buf.chunks_mut(n)) {
                    let dot: T = p.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        acc[j] += p[j] * (gr[j] - dot);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let outer: usize = node.value.shape()[..*axis].iter().product();
                let mut offset = 0;
                let row = g.len() / outer;
                for &inp in inputs {
                    let chunk = self.value(inp).len() / outer;
                    if self.req(inp) {
                        let buf = buffer(grads, inp, chunk * outer);
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + chunk];
                            for (acc, &x) in buf[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *acc += x;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Stack(inputs) => {
                let s = node.value.shape();
                let (b, t) = (s[0], s[1]);
                let width = g.len() / (b * t);
                for (ti, &inp) in inputs.iter().enumerate() {
                    if !self.req(inp) {
                        continue;
                    }
                    let buf = buffer(grads, inp, b * width);
                    for bi in 0..b {
                        let src = (bi * t + ti) * width;
                        for w in 0..width {
                            buf[bi * width + w] += g[src + w];
                        }
                    }
                }
            }
            Op::MaxOverAxis { x, argmax } => {
                let len = self.value(*x).len();
                let buf = buffer(grads, *x, len);
                for (i, &src) in argmax.iter().enumerate() {
                    if src != NO_INDEX {
                        buf[src] += g[i];
                    }
                }
            }
            Op::MeanOverAxis { x, axis, counts } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let len = self.value(*x).len();
                let buf = buffer(grads, *x, len);
                for o in 0..outer {
                    if counts[o] == 0 {
                        continue;
                    }
                    let scale = T::one() / T::from_f64(counts[o] as f64);
                    for j in 0..counts[o] {
                        for i in 0..inner {
                            buf[(o * n + j) * inner + i] += g[o * inner + i] * scale;
                        }
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let total = self.value(*x).len();
                let buf = buffer(grads, *x, total);
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    for k in 0..len * inner {
                        buf[dst + k] += g[src + k];
                    }
                }
            }
            Op::Select { x, axis, index } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let total = self.value(*x).len();
                let buf = buffer(grads, *x, total);
                for o in 0..outer {
                    let dst = (o * n + index) * inner;
                    for k in 0..inner {
                        buf[dst + k] += g[o * inner + k];
                    }
                }
            }
            Op::Reshape(x) => accumulate(grads, *x, g),
            Op::Gather { table, ids, skip_row } => {
                let p = params.get_mut(*table);
                if p.trainable {
                    let dim = p.value.shape()[1];
                    let grad = p.gradient.data_mut();
                    for (k, &id) in ids.iter().enumerate() {
                        if Some(id) == *skip_row {
                            continue;
                        }
                        for d in 0..dim {
                            grad[id * dim + d] += g[k * dim + d];
                        }
                    }
                }
            }
            Op::WeightedSum { weights, values } => {
                let sv = self.shape(*values);
                let (b, t, h) = (sv[0], sv[1], sv[2]);
                if self.req(*weights) {
                    let v = self.value(*values).data();
                    let buf = buffer(grads, *weights, b * t);
                    for bi in 0..b {
                        let gr = &g[bi * h..(bi + 1) * h];
                        for ti in 0..t {
                            let row = &v[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                            buf[bi * t + ti] += row.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                        }
                    }
                }
                if self.req(*values) {
                    let w = self.value(*weights).data();
                    let buf = buffer(grads, *values, b * t * h);
                    for bi in 0..b {
                        for ti in 0..t {
                            let a = w[bi * t + ti];
                            for k in 0..h {
                                buf[(bi * t + ti) * h + k] += a * g[bi * h + k];
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                let buf = buffer(grads, *x, len);
                for acc in buf.iter_mut() {
                    *acc += g[0];
                }
            }
            Op::CategoricalCrossEntropy { probs, target } => {
                let b = self.shape(*probs)[0];
                let (lo, hi) = clip_bounds::<T>();
                let p = self.value(*probs).data();
                let scale = g[0] / T::from_f64(b as f64);
                let buf = buffer(grads, *probs, p.len());
                for i in 0..p.len() {
                    if target[i] != T::zero() && p[i] > lo && p[i] < hi {
                        buf[i] -= scale * target[i] / p[i];
                    }
                }
            }
            Op::BinaryCrossEntropy { probs, target } => {
                let n = self.value(*probs).len();
                let (lo, hi) = clip_bounds::<T>();
                let p = self.value(*probs).data();
                let scale = g[0] / T::from_f64(n as f64);
                let buf = buffer(grads, *probs, n);
                for i in 0..n {
                    if p[i] > lo && p[i] < hi {
                        let t = target[i];
                        buf[i] -= scale * (t / p[i] - (T::one() - t) / (T::one() - p[i]));
                    }
                }
            }
        }
    }
}

fn clip_bounds<T: Scalar>() -> (T, T) {
    (T::from_f64(PROB_CLIP), T::one() - T::from_f64(PROB_CLIP))
}

fn buffer<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut [T] {
    grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, g: &[T]) {
    match &mut grads[id.0] {
        Some(buf) => {
            for (acc, &x) in buf.iter_mut().zip(g) {
                *acc += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}
