use std::collections::HashMap;

use crate::scalar::Scalar;

use super::kernels::{mm_nn, mm_nt, mm_tn};
use super::params::{ParamId, ParamStore};
use super::{shape_err, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Weighted message `out[tgt] += weight * x[src]` used by [`Tape::aggregate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge<T> {
    pub src: usize,
    pub tgt: usize,
    pub weight: T,
}

/// Which entries of a row-wise softmax take part in the normalization.
/// Excluded entries get probability exactly zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SoftmaxMask {
    /// Per-column switch; `None` keeps every column.
    pub keys: Option<Vec<bool>>,
    /// Row `i` may only see columns `j <= i`.
    pub causal: bool,
}

impl SoftmaxMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn keys(keys: Vec<bool>) -> Self {
        SoftmaxMask {
            keys: Some(keys),
            causal: false,
        }
    }

    pub fn causal() -> Self {
        SoftmaxMask {
            keys: None,
            causal: true,
        }
    }

    #[inline]
    fn allowed(&self, i: usize, j: usize) -> bool {
        if self.causal && j > i {
            return false;
        }
        self.keys.as_ref().is_none_or(|k| k[j])
    }
}

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<Option<usize>>,
        count: usize,
    },
    Aggregate(Var, Vec<Edge<T>>),
    Sum(Var),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording context for one forward/backward pass. Single owner; build a new
/// tape per example or batch.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    check_finite: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn ln_eps<T: Scalar>() -> T {
    T::lit(1e-6)
}

impl<T: Scalar> Tape<T> {
    /// Non-finite checking follows `debug_assertions`.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`; vars past that point
    /// become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.param_vars.retain(|_, v| v.0 < len);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var, TensorError> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite {
                op: op_name(&op),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Free input whose gradient is kept in [`Gradients`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Brings a stored parameter onto the tape. Repeated calls return the same
    /// handle so shared weights accumulate a single gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param,
            requires_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != k {
            return Err(shape_err(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![T::zero(); n * m];
        mm_nt(av.data(), bv.data(), n, k, m, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(&[n, m], out)?, Op::MatMulNt(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Elementwise sum. `b` may also be a single row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        if av.numel() == bv.numel() && av.rows() == bv.rows() {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| x + y)
                .collect();
            let out = Tensor::from_vec(av.shape(), data)?;
            self.push(out, Op::Add(a, b), rg)
        } else if bv.rows() == 1 && bv.cols() == av.cols() {
            let c = av.cols();
            let data = av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bv.data()[i % c])
                .collect();
            let out = Tensor::from_vec(av.shape(), data)?;
            self.push(out, Op::AddRow(a, b), rg)
        } else {
            Err(shape_err(
                "add",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ))
        }
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(
                "mul",
                format!("{:?} * {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(av.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, TensorError> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * c).collect();
        let out = Tensor::from_vec(av.shape(), data)?;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::from_vec(&[rows, total], data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(shape_err("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
            rows += self.value(p).rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::from_vec(&[rows, cols], data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        if start + len > cols {
            return Err(shape_err(
                "slice_cols",
                format!("{}..{} of {}", start, start + len, cols),
            ));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let rg = self.rg(a);
        let out = Tensor::from_vec(&[rows, len], data)?;
        self.push(out, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        if start + len > rows {
            return Err(shape_err(
                "slice_rows",
                format!("{}..{} of {}", start, start + len, rows),
            ));
        }
        let data = av.data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(a);
        let out = Tensor::from_vec(&[len, cols], data)?;
        self.push(out, Op::SliceRows(a, start), rg)
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let tv = self.value(table);
        let (rows, cols) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Index {
                    op: "gather",
                    index: id,
                    bound: rows,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let rg = self.rg(table);
        let out = Tensor::from_vec(&[ids.len(), cols], data)?;
        self.push(out, Op::Gather(table, ids.to_vec()), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let out = Tensor::from_vec(av.shape(), data)?;
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Row-wise softmax with the row maximum subtracted first. Rows with no
    /// allowed entry produce all zeros.
    pub fn softmax(&mut self, a: Var, mask: &SoftmaxMask) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        if let Some(k) = &mask.keys {
            if k.len() != cols {
                return Err(shape_err(
                    "softmax",
                    format!("mask width {} vs {}", k.len(), cols),
                ));
            }
        }
        let mut data = vec![T::zero(); rows * cols];
        for i in 0..rows {
            let row = av.row(i);
            let mut max = T::neg_infinity();
            for (j, &x) in row.iter().enumerate() {
                if mask.allowed(i, j) && x > max {
                    max = x;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let out = &mut data[i * cols..(i + 1) * cols];
            let mut total = T::zero();
            for (j, &x) in row.iter().enumerate() {
                if mask.allowed(i, j) {
                    let e = (x - max).exp();
                    out[j] = e;
                    total += e;
                }
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        let rg = self.rg(a);
        let out = Tensor::from_vec(av.shape(), data)?;
        self.push(out, Op::Softmax(a), rg)
    }

    /// Per-row normalization with learned scale and shift, epsilon 1e-6.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (rows, d) = (xv.rows(), xv.cols());
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.numel() != d || bv.numel() != d {
            return Err(shape_err(
                "layer_norm",
                format!("width {} vs scale {:?} shift {:?}", d, gv.shape(), bv.shape()),
            ));
        }
        let dn = T::lit(d as f64);
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + ln_eps::<T>()).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let out = Tensor::from_vec(xv.shape(), out)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, skipping rows whose target equals `ignore`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        let (rows, cols) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(shape_err(
                "cross_entropy",
                format!("{} targets for {} rows", targets.len(), rows),
            ));
        }
        let mut probs = vec![T::zero(); rows * cols];
        let mut kept = Vec::with_capacity(rows);
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, &t) in targets.iter().enumerate() {
            if Some(t) == ignore {
                kept.push(None);
                continue;
            }
            if t >= cols {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    bound: cols,
                });
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for &x in row {
                z += (x - max).exp();
            }
            let logz = z.ln() + max;
            for (j, &x) in row.iter().enumerate() {
                probs[r * cols + j] = (x - logz).exp();
            }
            total += logz - row[t];
            count += 1;
            kept.push(Some(t));
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::lit(count as f64)
        };
        let rg = self.rg(logits);
        self.push(
            Tensor::from_vec(&[1], vec![loss])?,
            Op::CrossEntropy {
                logits,
                probs,
                targets: kept,
                count,
            },
            rg,
        )
    }

    /// Sparse neighborhood sum: `out[e.tgt] += e.weight * x[e.src]` over all
    /// edges, with `out_rows` output rows.
    pub fn aggregate(&mut self, x: Var, edges: &[Edge<T>], out_rows: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = vec![T::zero(); out_rows * cols];
        for e in edges {
            if e.src >= rows || e.tgt >= out_rows {
                return Err(TensorError::Index {
                    op: "aggregate",
                    index: e.src.max(e.tgt),
                    bound: rows.min(out_rows),
                });
            }
            let src = xv.row(e.src);
            let dst = &mut out[e.tgt * cols..(e.tgt + 1) * cols];
            for (o, &s) in dst.iter_mut().zip(src) {
                *o += e.weight * s;
            }
        }
        let rg = self.rg(x);
        let out = Tensor::from_vec(&[out_rows, cols], out)?;
        self.push(out, Op::Aggregate(x, edges.to_vec()), rg)
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).reshaped(shape)?;
        let rg = self.rg(a);
        self.push(out, Op::Reshape(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[1], vec![s])?, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a).numel().max(1);
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>, TensorError> {
        let grads = self.backward(loss)?;
        for (&id, &v) in &self.param_vars {
            if let Some(g) = grads.get(v) {
                let p = store.get_mut(id);
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
        }
        Ok(grads)
    }

    /// Gradients of every parameter used on the tape, ordered by id. Lets
    /// several tapes run in parallel and be summed afterwards.
    pub fn param_gradients(&self, loss: Var) -> Result<Vec<(ParamId, Tensor<T>)>, TensorError> {
        let mut grads = self.backward(loss)?;
        let mut out: Vec<(ParamId, Tensor<T>)> = self
            .param_vars
            .iter()
            .filter_map(|(&id, &v)| grads.grads[v.0].take().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| id.index());
        Ok(out)
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), TensorError> {
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let mut da = vec![T::zero(); n * k];
                    mm_nt(g.data(), bv.data(), n, m, k, &mut da);
                    self.accum(grads, *a, Tensor::from_vec(av.shape(), da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * m];
                    mm_tn(av.data(), g.data(), n, k, m, &mut db);
                    self.accum(grads, *b, Tensor::from_vec(bv.shape(), db)?);
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.rows());
                if self.rg(*a) {
                    let mut da = vec![T::zero(); n * k];
                    mm_nn(g.data(), bv.data(), n, m, k, &mut da);
                    self.accum(grads, *a, Tensor::from_vec(av.shape(), da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); m * k];
                    mm_tn(g.data(), av.data(), n, m, k, &mut db);
                    self.accum(grads, *b, Tensor::from_vec(bv.shape(), db)?);
                }
            }
            Op::Reshape(a) => {
                self.accum(grads, *a, g.reshaped(self.shape(*a))?);
            }
            Op::Transpose(a) => {
                self.accum(grads, *a, g.transpose().reshaped(self.shape(*a))?);
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    self.accum(grads, *a, g.reshaped(self.shape(*a))?);
                }
                if self.rg(*b) {
                    self.accum(grads, *b, g.reshaped(self.shape(*b))?);
                }
            }
            Op::AddRow(a, b) => {
                if self.rg(*a) {
                    self.accum(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for r in 0..g.rows() {
                        for (d, &x) in db.iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    self.accum(grads, *b, Tensor::from_vec(self.shape(*b), db)?);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    self.accum(grads, *a, Tensor::from_vec(out_shape, d)?);
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    self.accum(grads, *b, Tensor::from_vec(out_shape, d)?);
                }
            }
            Op::Scale(a, c) => {
                let d = g.data().iter().map(|&x| x * *c).collect();
                self.accum(grads, *a, Tensor::from_vec(self.shape(*a), d)?);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accum(grads, p, Tensor::from_vec(self.shape(p), d)?);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).rows();
                    if self.rg(p) {
                        let d = g.data()[offset * cols..(offset + n) * cols].to_vec();
                        self.accum(grads, p, Tensor::from_vec(self.shape(p), d)?);
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (rows, cols) = (av.rows(), av.cols());
                let w = g.cols();
                let mut d = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                self.accum(grads, *a, Tensor::from_vec(av.shape(), d)?);
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let cols = av.cols();
                let mut d = vec![T::zero(); av.numel()];
                d[start * cols..start * cols + g.numel()].copy_from_slice(g.data());
                self.accum(grads, *a, Tensor::from_vec(av.shape(), d)?);
            }
            Op::Gather(table, ids) => {
                let tv = self.value(*table);
                let cols = tv.cols();
                let mut d = vec![T::zero(); tv.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    for (x, &y) in d[id * cols..(id + 1) * cols].iter_mut().zip(g.row(i)) {
                        *x += y;
                    }
                }
                self.accum(grads, *table, Tensor::from_vec(tv.shape(), d)?);
            }
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&x, &y)| if y > T::zero() { x } else { T::zero() })
                    .collect();
                self.accum(grads, *a, Tensor::from_vec(out_shape, d)?);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                let mut d = vec![T::zero(); y.numel()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..cols {
                        d[r * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accum(grads, *a, Tensor::from_vec(out_shape, d)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = g.cols();
                let rows = g.rows();
                let gam = self.value(*gamma).data();
                if self.rg(*gamma) {
                    let mut dg = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g.data()[r * d + j] * xhat[r * d + j];
                        }
                    }
                    self.accum(grads, *gamma, Tensor::from_vec(self.shape(*gamma), dg)?);
                }
                if self.rg(*beta) {
                    let mut db = vec![T::zero(); d];
                    for r in 0..rows {
                        for (b, &x) in db.iter_mut().zip(g.row(r)) {
                            *b += x;
                        }
                    }
                    self.accum(grads, *beta, Tensor::from_vec(self.shape(*beta), db)?);
                }
                if self.rg(*x) {
                    let dn = T::lit(d as f64);
                    let mut dx = vec![T::zero(); rows * d];
                    for r in 0..rows {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = g.data()[r * d + j] * gam[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + j];
                        }
                        mean_dh /= dn;
                        mean_dh_h /= dn;
                        for j in 0..d {
                            let dh = g.data()[r * d + j] * gam[j];
                            dx[r * d + j] = rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                        }
                    }
                    self.accum(grads, *x, Tensor::from_vec(self.shape(*x), dx)?);
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                count,
            } => {
                let lv = self.value(*logits);
                let cols = lv.cols();
                let mut d = vec![T::zero(); lv.numel()];
                if *count > 0 {
                    let scale = g.scalar() / T::lit(*count as f64);
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for j in 0..cols {
                                d[r * cols + j] = probs[r * cols + j] * scale;
                            }
                            d[r * cols + t] -= scale;
                        }
                    }
                }
                self.accum(grads, *logits, Tensor::from_vec(lv.shape(), d)?);
            }
            Op::Aggregate(x, edges) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = vec![T::zero(); xv.numel()];
                for e in edges {
                    let src = g.row(e.tgt);
                    for (o, &s) in d[e.src * cols..(e.src + 1) * cols].iter_mut().zip(src) {
                        *o += e.weight * s;
                    }
                }
                self.accum(grads, *x, Tensor::from_vec(xv.shape(), d)?);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                self.accum(grads, *a, Tensor::full(av.shape(), g.scalar()));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    fn reshaped(&self, shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        Tensor::from_vec(shape, self.data().to_vec())
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param => "param",
        Op::MatMul(..) => "matmul",
        Op::MatMulNt(..) => "matmul_nt",
        Op::Transpose(_) => "transpose",
        Op::Add(..) | Op::AddRow(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::ConcatCols(_) | Op::ConcatRows(_) => "concat",
        Op::SliceCols(..) | Op::SliceRows(..) => "slice",
        Op::Gather(..) => "gather",
        Op::Relu(_) => "relu",
        Op::Softmax(_) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::Aggregate(..) => "aggregate",
        Op::Sum(_) => "sum",
        Op::Reshape(_) => "reshape",
    }
}
