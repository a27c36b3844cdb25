use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{as_matrix, broadcast_index_map, broadcast_shape, Tensor};
use crate::error::{Error, Result};
use crate::params::ParameterSet;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Div,
    Tanh,
    Sigmoid,
    Square,
    Sqrt,
    Neg,
}

impl ElementwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Binary {
        kind: ElementwiseKind,
        a: usize,
        b: usize,
    },
    Unary {
        kind: ElementwiseKind,
        a: usize,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Transpose {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    Reduce {
        kind: ReduceKind,
        a: usize,
        axis: Option<usize>,
        argmax: Vec<usize>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        a: usize,
        axis: usize,
        start: usize,
    },
    Gather {
        a: usize,
        index: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; only leaves carry one.
    grad: Option<Vec<f64>>,
}

/// Linear record of a computation. Nodes are appended in execution order,
/// which is therefore a valid topological order for the reverse sweep.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let grad = matches!(op, Op::Leaf).then(|| vec![0.0; value.len()]);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Trainable input with a gradient slot.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Registers every tensor of `params` as a leaf, in name order.
    pub fn bind(&mut self, params: &ParameterSet) -> BoundParams {
        let vars = params
            .iter()
            .map(|(name, t)| (name.to_string(), self.leaf(t.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Registers every tensor of `params` as a constant. For inference.
    pub fn bind_frozen(&mut self, params: &ParameterSet) -> BoundParams {
        let vars = params
            .iter()
            .map(|(name, t)| (name.to_string(), self.constant(t.clone())))
            .collect();
        BoundParams { vars }
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    /// Accumulated gradient of a leaf; `None` for non-leaf nodes.
    pub fn grad(&self, v: Var) -> Result<Option<Tensor>> {
        let node = &self.nodes[self.idx(v)?];
        Ok(node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape().to_vec(),
            data: g.clone(),
        }))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    // ---- elementwise -------------------------------------------------------

    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => self.unary(kind, a),
            _ => Err(Error::Arity { op: "elementwise" }),
        }
    }

    fn binary(&mut self, kind: ElementwiseKind, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let out_shape = broadcast_shape(va.shape(), vb.shape()).ok_or_else(|| Error::ShapeMismatch {
            op: "elementwise",
            lhs: va.shape().to_vec(),
            rhs: vb.shape().to_vec(),
        })?;
        let f: fn(f64, f64) -> f64 = match kind {
            ElementwiseKind::Add => |x, y| x + y,
            ElementwiseKind::Sub => |x, y| x - y,
            ElementwiseKind::Mul => |x, y| x * y,
            ElementwiseKind::Div => |x, y| x / y,
            _ => unreachable!("unary kind in binary op"),
        };
        let data: Vec<f64> = if va.shape() == out_shape.as_slice() && vb.shape() == out_shape.as_slice() {
            va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else if vb.len() == 1 {
            let y = vb.data()[0];
            broadcast_index_map(va.shape(), &out_shape)
                .into_iter()
                .map(|i| f(va.data()[i], y))
                .collect()
        } else {
            let ma = broadcast_index_map(va.shape(), &out_shape);
            let mb = broadcast_index_map(vb.shape(), &out_shape);
            ma.into_iter()
                .zip(mb)
                .map(|(i, j)| f(va.data()[i], vb.data()[j]))
                .collect()
        };
        let rg = self.rg(ia) || self.rg(ib);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Binary { kind, a: ia, b: ib }, rg))
    }

    fn unary(&mut self, kind: ElementwiseKind, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let f: fn(f64) -> f64 = match kind {
            ElementwiseKind::Tanh => f64::tanh,
            ElementwiseKind::Sigmoid => sigmoid,
            ElementwiseKind::Square => |x| x * x,
            ElementwiseKind::Sqrt => f64::sqrt,
            ElementwiseKind::Neg => |x| -x,
            _ => return Err(Error::Arity { op: "elementwise" }),
        };
        let va = &self.nodes[ia].value;
        let value = Tensor {
            shape: va.shape().to_vec(),
            data: va.data().iter().map(|&x| f(x)).collect(),
        };
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Unary { kind, a: ia }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Div, a, b)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Sigmoid, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Square, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Sqrt, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Neg, a)
    }

    /// `c * a`
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.constant(Tensor::scalar(c));
        self.mul(a, k)
    }

    /// `a + c`
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.constant(Tensor::scalar(c));
        self.add(a, k)
    }

    /// `c - a`
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Result<Var> {
        let k = self.constant(Tensor::scalar(c));
        self.sub(k, a)
    }

    // ---- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (m, k) = as_matrix(va.shape(), "matmul")?;
        let (k2, n) = as_matrix(vb.shape(), "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), false, vb.data(), false, &mut out);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a: ia, b: ib }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.transpose()?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Transpose { a: ia }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.reshape(shape)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Reshape { a: ia }, rg))
    }

    // ---- reductions --------------------------------------------------------

    /// Reduces over `axis` (removing it) or over every element when `axis`
    /// is `None`, giving a rank-0 result. `Max` breaks ties toward the
    /// lowest index.
    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axis: Option<usize>) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        if va.is_empty() {
            return Err(Error::EmptyReduction);
        }
        let (outer, n, inner, out_shape) = reduce_dims(va.shape(), axis)?;
        if n == 0 {
            return Err(Error::EmptyReduction);
        }
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    for k in 0..n {
                        let row = &va.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
                        for (acc, &x) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    let inv = n as f64;
                    out.iter_mut().for_each(|x| *x /= inv);
                }
            }
            ReduceKind::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = (o * n) * inner + i;
                        for k in 1..n {
                            let j = (o * n + k) * inner + i;
                            if va.data()[j] > va.data()[best] {
                                best = j;
                            }
                        }
                        out[o * inner + i] = va.data()[best];
                        argmax[o * inner + i] = best;
                    }
                }
            }
        }
        let rg = self.rg(ia);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Reduce {
                kind,
                a: ia,
                axis,
                argmax,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, a, None)
    }

    pub fn max(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Max, a, None)
    }

    // ---- structural --------------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let idxs = inputs.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let first = idxs.first().ok_or(Error::Arity { op: "concat" })?;
        let base = self.nodes[*first].value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidAxis { axis, rank: base.len() });
        }
        let mut total = 0;
        for &i in &idxs {
            let s = self.nodes[i].value.shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idxs {
                let v = &self.nodes[i].value;
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = idxs.iter().any(|&i| self.rg(i));
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { inputs: idxs, axis }, rg))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        let shape = va.shape();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: shape.to_vec(),
                rhs: vec![start, len],
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            data.extend_from_slice(&va.data()[from..from + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let rg = self.rg(ia);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Slice { a: ia, axis, start }, rg))
    }

    /// `out[i] = a.flat[index[i]]`, reshaped to `shape`. Indices may repeat;
    /// the backward pass scatter-adds.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        if let Some(&bad) = index.iter().find(|&&i| i >= va.len()) {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: va.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let data = index.iter().map(|&i| va.data()[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Gather { a: ia, index }, rg))
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Accumulates d(root)/d(leaf) into every leaf's gradient slot.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let ir = self.idx(root)?;
        let rv = &self.nodes[ir].value;
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        if !self.rg(ir) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; ir + 1];
        grads[ir] = Some(vec![1.0]);
        for i in (0..=ir).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if let Some(slot) = self.nodes[i].grad.as_mut() {
                for (s, x) in slot.iter_mut().zip(&g) {
                    *s += x;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Binary { kind, a, b } => {
                let (a, b) = (*a, *b);
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                let same = va.shape() == out.shape() && vb.shape() == out.shape();
                let ma = (!same).then(|| broadcast_index_map(va.shape(), out.shape()));
                let mb = (!same).then(|| broadcast_index_map(vb.shape(), out.shape()));
                let ia = |o: usize| ma.as_ref().map_or(o, |m| m[o]);
                let ib = |o: usize| mb.as_ref().map_or(o, |m| m[o]);
                if self.rg(a) {
                    let ga = slot(grads, a, va.len());
                    for (o, &go) in g.iter().enumerate() {
                        let d = match kind {
                            ElementwiseKind::Add | ElementwiseKind::Sub => go,
                            ElementwiseKind::Mul => go * vb.data()[ib(o)],
                            ElementwiseKind::Div => go / vb.data()[ib(o)],
                            _ => unreachable!(),
                        };
                        ga[ia(o)] += d;
                    }
                }
                if self.rg(b) {
                    let gb = slot(grads, b, vb.len());
                    for (o, &go) in g.iter().enumerate() {
                        let d = match kind {
                            ElementwiseKind::Add => go,
                            ElementwiseKind::Sub => -go,
                            ElementwiseKind::Mul => go * va.data()[ia(o)],
                            ElementwiseKind::Div => {
                                let y = vb.data()[ib(o)];
                                -go * va.data()[ia(o)] / (y * y)
                            }
                            _ => unreachable!(),
                        };
                        gb[ib(o)] += d;
                    }
                }
            }
            Op::Unary { kind, a } => {
                let a = *a;
                if !self.rg(a) {
                    return;
                }
                let x = self.nodes[a].value.data();
                let y = out.data();
                let ga = slot(grads, a, x.len());
                for o in 0..g.len() {
                    ga[o] += match kind {
                        ElementwiseKind::Tanh => g[o] * (1.0 - y[o] * y[o]),
                        ElementwiseKind::Sigmoid => g[o] * y[o] * (1.0 - y[o]),
                        ElementwiseKind::Square => g[o] * 2.0 * x[o],
                        ElementwiseKind::Sqrt => g[o] / (2.0 * y[o]),
                        ElementwiseKind::Neg => -g[o],
                        _ => unreachable!(),
                    };
                }
            }
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.rg(a) {
                    // dA = dC · Bᵀ
                    gemm(m, n, k, g, false, vb.data(), true, slot(grads, a, m * k));
                }
                if self.rg(b) {
                    // dB = Aᵀ · dC
                    gemm(k, m, n, va.data(), true, g, false, slot(grads, b, k * n));
                }
            }
            Op::Transpose { a } => {
                let a = *a;
                if !self.rg(a) {
                    return;
                }
                let (r, c) = (self.nodes[a].value.shape()[0], self.nodes[a].value.shape()[1]);
                let ga = slot(grads, a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Reshape { a } => {
                let a = *a;
                if self.rg(a) {
                    add_into(slot(grads, a, g.len()), g);
                }
            }
            Op::Reduce { kind, a, axis, argmax } => {
                let a = *a;
                if !self.rg(a) {
                    return;
                }
                let va = &self.nodes[a].value;
                let ga = slot(grads, a, va.len());
                match kind {
                    ReduceKind::Max => {
                        for (&j, &go) in argmax.iter().zip(g) {
                            ga[j] += go;
                        }
                    }
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let (outer, n, inner, _) = reduce_dims(va.shape(), *axis).expect("validated in forward");
                        let scale = if *kind == ReduceKind::Mean { 1.0 / n as f64 } else { 1.0 };
                        for o in 0..outer {
                            for k in 0..n {
                                let base = (o * n + k) * inner;
                                for i in 0..inner {
                                    ga[base + i] += g[o * inner + i] * scale;
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let outer: usize = out.shape()[..*axis].iter().product();
                let inner: usize = out.shape()[axis + 1..].iter().product();
                let row = out.shape()[*axis] * inner;
                let mut offset = 0;
                for &input in inputs {
                    let vi = &self.nodes[input].value;
                    let chunk = vi.shape()[*axis] * inner;
                    if self.rg(input) {
                        let gi = slot(grads, input, vi.len());
                        for o in 0..outer {
                            add_into(
                                &mut gi[o * chunk..(o + 1) * chunk],
                                &g[o * row + offset..o * row + offset + chunk],
                            );
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Slice { a, axis, start } => {
                let a = *a;
                if !self.rg(a) {
                    return;
                }
                let va = &self.nodes[a].value;
                let shape = va.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let n = shape[*axis];
                let len = out.shape()[*axis];
                let ga = slot(grads, a, va.len());
                for o in 0..outer {
                    let from = (o * n + start) * inner;
                    add_into(
                        &mut ga[from..from + len * inner],
                        &g[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }
            Op::Gather { a, index } => {
                let a = *a;
                if self.rg(a) {
                    let ga = slot(grads, a, self.nodes[a].value.len());
                    for (&j, &go) in index.iter().zip(g) {
                        ga[j] += go;
                    }
                }
            }
        }
    }
}

/// Leaf variables of a bound [`ParameterSet`], keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Current gradients of every bound parameter.
    pub fn gradients(&self, tape: &Tape) -> Result<ParameterSet> {
        let mut out = ParameterSet::new();
        for (name, &var) in &self.vars {
            let g = tape.grad(var)?.ok_or(Error::ForeignVar)?;
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn reduce_dims(shape: &[usize], axis: Option<usize>) -> Result<(usize, usize, usize, Vec<usize>)> {
    match axis {
        None => Ok((1, shape.iter().product(), 1, Vec::new())),
        Some(ax) if ax < shape.len() => {
            let mut out = shape.to_vec();
            out.remove(ax);
            Ok((
                shape[..ax].iter().product(),
                shape[ax],
                shape[ax + 1..].iter().product(),
                out,
            ))
        }
        Some(ax) => Err(Error::InvalidAxis {
            axis: ax,
            rank: shape.len(),
        }),
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut [f64] {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `c += op(a) · op(b)` where `op(a)` is m×k and `op(b)` is k×n; a
/// transposed operand is stored in its untransposed row-major layout.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_t { (1, k) } else { (n, 1) };
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements (checked
    // above) and the strides describe in-bounds row-major layouts of them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
