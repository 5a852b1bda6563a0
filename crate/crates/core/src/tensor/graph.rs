use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::kernels::{self, dot, gelu_grad_scalar, log_softmax_slice, row_stats};
use super::{Result, Tensor, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{sc, Scalar};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    Gelu(usize),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
    },
    Unfold {
        x: usize,
        kernel: usize,
        stride: usize,
    },
    DepthwiseConv {
        x: usize,
        w: usize,
        kernel: usize,
        stride: usize,
    },
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    Sum(usize),
    Mean(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
    },
    CosineDistance {
        a: usize,
        b: usize,
        eps: f64,
    },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order; entry `i` only refers to entries `< i`.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to one recorded value.
#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var<'_, T> {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&self, value: Arc<Tensor<T>>, op: Op, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&self, t: Tensor<T>) -> Var<'_, T> {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&self, t: Tensor<T>) -> Var<'_, T> {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node so
    /// gradients from every use land in one place.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                graph: self,
                id: node,
            };
        }
        let v = self.push_shared(store.shared_value(id), Op::Leaf, store.is_trainable(id));
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    pub fn concat_rows<'g>(&'g self, parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_rows of nothing".into()))?;
        let n = first.value().dims2("concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = p.value();
            let (m, n2) = v.dims2("concat_rows")?;
            if n2 != n {
                return Err(TensorError::DimMismatch {
                    op: "concat_rows",
                    lhs: first.shape(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += m;
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires(&ids);
        Ok(self.push(Tensor::new(vec![rows, n], data)?, Op::ConcatRows(ids), rg))
    }

    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_cols of nothing".into()))?;
        let m = first.value().dims2("concat_cols")?.0;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut widths = Vec::with_capacity(parts.len());
        for v in &values {
            let (m2, n) = v.dims2("concat_cols")?;
            if m2 != m {
                return Err(TensorError::DimMismatch {
                    op: "concat_cols",
                    lhs: first.shape(),
                    rhs: v.shape().to_vec(),
                });
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires(&ids);
        Ok(self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols(ids), rg))
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather_rows<'g>(&'g self, table: Var<'g, T>, ids: &[usize]) -> Result<Var<'g, T>> {
        let t = table.value();
        let (vocab, d) = t.dims2("gather_rows")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= vocab {
                return Err(TensorError::Contract(format!(
                    "row index {i} out of range for table with {vocab} rows"
                )));
            }
            data.extend_from_slice(t.row(i));
        }
        let rg = self.requires(&[table.id]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Gather {
                table: table.id,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Gradients of interior nodes are
    /// discarded; leaf and parameter gradients are returned.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if lv.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        let mut leaves: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![T::one()]);
        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut push = |j: usize, contrib: Vec<T>| {
                if !nodes[j].requires_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(acc) => {
                        for (a, x) in acc.iter_mut().zip(contrib) {
                            *a += x;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |j: usize| -> &Tensor<T> { &nodes[j].value };
            match &node.op {
                Op::Leaf => {
                    leaves[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let gt = Tensor::new(node.value.shape().to_vec(), g)?;
                    if nodes[*a].requires_grad {
                        push(*a, kernels::matmul_t(&gt, val(*b))?.into_data());
                    }
                    if nodes[*b].requires_grad {
                        push(*b, kernels::t_matmul(val(*a), &gt)?.into_data());
                    }
                }
                Op::MatMulT(a, b) => {
                    let gt = Tensor::new(node.value.shape().to_vec(), g)?;
                    if nodes[*a].requires_grad {
                        push(*a, kernels::matmul(&gt, val(*b))?.into_data());
                    }
                    if nodes[*b].requires_grad {
                        push(*b, kernels::t_matmul(&gt, val(*a))?.into_data());
                    }
                }
                Op::Add(a, b) => {
                    if a == b {
                        push(*a, g.iter().map(|&x| x + x).collect());
                    } else {
                        push(*b, g.clone());
                        push(*a, g);
                    }
                }
                Op::Sub(a, b) => {
                    push(*b, g.iter().map(|&x| -x).collect());
                    push(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a).data(), val(*b).data());
                    push(*a, g.iter().zip(bv).map(|(&x, &y)| x * y).collect());
                    push(*b, g.iter().zip(av).map(|(&x, &y)| x * y).collect());
                }
                Op::Scale(a, c) => {
                    let c = sc::<T>(*c);
                    push(*a, g.into_iter().map(|x| x * c).collect());
                }
                Op::AddRow(x, bias) => {
                    let n = val(*bias).len();
                    if nodes[*bias].requires_grad {
                        let mut gb = vec![T::zero(); n];
                        for row in g.chunks(n) {
                            for (acc, &v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        push(*bias, gb);
                    }
                    push(*x, g);
                }
                Op::Gelu(x) => {
                    let xv = val(*x).data();
                    push(
                        *x,
                        g.iter()
                            .zip(xv)
                            .map(|(&gi, &xi)| gi * gelu_grad_scalar(xi))
                            .collect(),
                    );
                }
                Op::SoftmaxRows(x) => {
                    let y = node.value.data();
                    let n = node.value.cols();
                    let mut gx = vec![T::zero(); y.len()];
                    for ((grow, yrow), out) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                        let inner = dot(grow, yrow);
                        for ((o, &gi), &yi) in out.iter_mut().zip(grow).zip(yrow) {
                            *o = yi * (gi - inner);
                        }
                    }
                    push(*x, gx);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let xv = val(*x);
                    let n = xv.cols();
                    let gam = val(*gamma).data();
                    let mut gx = vec![T::zero(); xv.len()];
                    let mut gg = vec![T::zero(); n];
                    let mut gbeta = vec![T::zero(); n];
                    let inv_n = sc::<T>(1.0 / n as f64);
                    for ((xrow, grow), out) in xv.data().chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                        let (mean, rstd) = row_stats(xrow, sc(*eps));
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for k in 0..n {
                            let xhat = (xrow[k] - mean) * rstd;
                            gg[k] += grow[k] * xhat;
                            gbeta[k] += grow[k];
                            let dxhat = grow[k] * gam[k];
                            s1 += dxhat;
                            s2 += dxhat * xhat;
                        }
                        for k in 0..n {
                            let xhat = (xrow[k] - mean) * rstd;
                            let dxhat = grow[k] * gam[k];
                            out[k] = rstd * (dxhat - s1 * inv_n - xhat * s2 * inv_n);
                        }
                    }
                    push(*gamma, gg);
                    push(*beta, gbeta);
                    push(*x, gx);
                }
                Op::Unfold { x, kernel, stride } => {
                    let xv = val(*x);
                    let c = xv.cols();
                    let mut gx = vec![T::zero(); xv.len()];
                    let width = kernel * c;
                    for (t, grow) in g.chunks(width).enumerate() {
                        let base = t * stride * c;
                        for (o, &v) in gx[base..base + width].iter_mut().zip(grow) {
                            *o += v;
                        }
                    }
                    push(*x, gx);
                }
                Op::DepthwiseConv { x, w, kernel, stride } => {
                    let xv = val(*x);
                    let wv = val(*w).data();
                    let c = xv.cols();
                    let xd = xv.data();
                    let mut gx = vec![T::zero(); xv.len()];
                    let mut gw = vec![T::zero(); wv.len()];
                    for (t, grow) in g.chunks(c).enumerate() {
                        for j in 0..*kernel {
                            let base = (t * stride + j) * c;
                            for ch in 0..c {
                                gx[base + ch] += grow[ch] * wv[ch * kernel + j];
                                gw[ch * kernel + j] += grow[ch] * xd[base + ch];
                            }
                        }
                    }
                    push(*w, gw);
                    push(*x, gx);
                }
                Op::Gather { table, ids } => {
                    let tv = val(*table);
                    let d = tv.cols();
                    let mut gt = vec![T::zero(); tv.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &v) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += v;
                        }
                    }
                    push(*table, gt);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).len();
                        push(p, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let m = node.value.rows();
                    let total = node.value.cols();
                    let mut col = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g[i * total + col..i * total + col + w]);
                        }
                        push(p, gp);
                        col += w;
                    }
                }
                Op::SliceRows { x, start } => {
                    let xv = val(*x);
                    let n = xv.cols();
                    let mut gx = vec![T::zero(); xv.len()];
                    gx[start * n..start * n + g.len()].copy_from_slice(&g);
                    push(*x, gx);
                }
                Op::SliceCols { x, start } => {
                    let xv = val(*x);
                    let n = xv.cols();
                    let w = node.value.cols();
                    let mut gx = vec![T::zero(); xv.len()];
                    for (i, grow) in g.chunks(w).enumerate() {
                        gx[i * n + start..i * n + start + w].copy_from_slice(grow);
                    }
                    push(*x, gx);
                }
                Op::Sum(x) => {
                    push(*x, vec![g[0]; val(*x).len()]);
                }
                Op::Mean(x) => {
                    let n = val(*x).len();
                    push(*x, vec![g[0] / sc::<T>(n as f64); n]);
                }
                Op::CrossEntropy { logits, targets } => {
                    let lv = val(*logits);
                    let v = lv.cols();
                    let scale = g[0] / sc::<T>(targets.len() as f64);
                    let mut gl = Vec::with_capacity(lv.len());
                    for (row, &t) in lv.data().chunks(v).zip(targets) {
                        let lsm = log_softmax_slice(row);
                        for (k, l) in lsm.into_iter().enumerate() {
                            let p = l.exp();
                            let onehot = if k == t { T::one() } else { T::zero() };
                            gl.push((p - onehot) * scale);
                        }
                    }
                    push(*logits, gl);
                }
                Op::CosineDistance { a, b, eps } => {
                    let (av, bv) = (val(*a), val(*b));
                    let n = av.cols();
                    let rows = av.rows();
                    let scale = g[0] / sc::<T>(rows as f64);
                    let mut ga = vec![T::zero(); av.len()];
                    let mut gb = vec![T::zero(); bv.len()];
                    for r in 0..rows {
                        let (x, y) = (av.row(r), bv.row(r));
                        let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
                        if nx < sc(*eps) || ny < sc(*eps) {
                            continue;
                        }
                        let cos = dot(x, y) / (nx * ny);
                        for k in 0..n {
                            // distance = 1 - cos, hence the sign flip
                            ga[r * n + k] = -scale * (y[k] / (nx * ny) - cos * x[k] / (nx * nx));
                            gb[r * n + k] = -scale * (x[k] / (nx * ny) - cos * y[k] / (ny * ny));
                        }
                    }
                    push(*a, ga);
                    push(*b, gb);
                }
            }
        }
        let params = self.params.borrow().clone();
        Ok(Gradients { leaves, params })
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    leaves: Vec<Option<Vec<T>>>,
    params: HashMap<ParamId, usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, if it was reached by the reverse pass.
    pub fn get(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        let g = self.leaves.get(v.id)?.as_ref()?;
        Tensor::new(v.shape(), g.clone()).ok()
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        let node = *self.params.get(&id)?;
        self.leaves.get(node)?.as_deref()
    }

    /// Parameter gradients ordered by parameter id.
    pub fn param_grads(&self) -> Vec<(ParamId, &[T])> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&id, &node)| Some((id, self.leaves.get(node)?.as_deref()?)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, value: Tensor<T>, op: Op) -> Var<'g, T> {
        let rg = self.requires_grad();
        self.graph.push(value, op, rg)
    }

    fn binary(self, other: Var<'g, T>, value: Tensor<T>, op: Op) -> Var<'g, T> {
        let rg = self.graph.requires(&[self.id, other.id]);
        self.graph.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = kernels::matmul(&self.value(), &other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = kernels::matmul_t(&self.value(), &other.value())?;
        Ok(self.binary(other, v, Op::MatMulT(self.id, other.id)))
    }

    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = self.value().add(&other.value())?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = self.value().sub(&other.value())?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = self.value().zip_map(&other.value(), "mul", |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, c: f64) -> Var<'g, T> {
        let v = self.value().scale(sc(c));
        self.unary(v, Op::Scale(self.id, c))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(self, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = self.value().add_row(bias.value().data())?;
        Ok(self.binary(bias, v, Op::AddRow(self.id, bias.id)))
    }

    pub fn gelu(self) -> Var<'g, T> {
        let v = self.value().gelu();
        self.unary(v, Op::Gelu(self.id))
    }

    pub fn softmax_rows(self) -> Result<Var<'g, T>> {
        let v = kernels::softmax_rows(&self.value())?;
        Ok(self.unary(v, Op::SoftmaxRows(self.id)))
    }

    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        let v = kernels::layer_norm_rows(
            &self.value(),
            gamma.value().data(),
            beta.value().data(),
            sc(eps),
        )?;
        let rg = self.graph.requires(&[self.id, gamma.id, beta.id]);
        Ok(self.graph.push(
            v,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                eps,
            },
            rg,
        ))
    }

    /// Sliding windows over rows: `[L×C] → [L'×(kernel·C)]`, window `t` covering
    /// rows `t·stride .. t·stride+kernel`, `L' = (L − kernel)/stride + 1`.
    pub fn unfold(self, kernel: usize, stride: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (l, c) = x.dims2("unfold")?;
        if kernel == 0 || stride == 0 {
            return Err(TensorError::Contract("kernel and stride must be positive".into()));
        }
        if l < kernel {
            return Err(TensorError::InputTooShort { len: l, kernel });
        }
        let out_len = (l - kernel) / stride + 1;
        let width = kernel * c;
        let mut data = Vec::with_capacity(out_len * width);
        for t in 0..out_len {
            let base = t * stride * c;
            data.extend_from_slice(&x.data()[base..base + width]);
        }
        let v = Tensor::new(vec![out_len, width], data)?;
        Ok(self.unary(
            v,
            Op::Unfold {
                x: self.id,
                kernel,
                stride,
            },
        ))
    }

    /// Per-channel strided correlation with `w: [C×kernel]`.
    pub fn depthwise_conv(self, w: Var<'g, T>, kernel: usize, stride: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let wv = w.value();
        let (l, c) = x.dims2("depthwise_conv")?;
        if wv.shape() != [c, kernel] {
            return Err(TensorError::DimMismatch {
                op: "depthwise_conv",
                lhs: x.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        if stride == 0 || kernel == 0 {
            return Err(TensorError::Contract("kernel and stride must be positive".into()));
        }
        if l < kernel {
            return Err(TensorError::InputTooShort { len: l, kernel });
        }
        let out_len = (l - kernel) / stride + 1;
        let mut data = vec![T::zero(); out_len * c];
        let (xd, wd) = (x.data(), wv.data());
        for t in 0..out_len {
            for j in 0..kernel {
                let base = (t * stride + j) * c;
                for ch in 0..c {
                    data[t * c + ch] += wd[ch * kernel + j] * xd[base + ch];
                }
            }
        }
        let v = Tensor::new(vec![out_len, c], data)?;
        Ok(self.binary(
            w,
            v,
            Op::DepthwiseConv {
                x: self.id,
                w: w.id,
                kernel,
                stride,
            },
        ))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'g, T>> {
        let v = self.value().slice_rows(start, end)?;
        Ok(self.unary(v, Op::SliceRows { x: self.id, start }))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (m, n) = x.dims2("slice_cols")?;
        if start > end || end > n {
            return Err(TensorError::Contract(format!(
                "column range {start}..{end} out of bounds for {n} columns"
            )));
        }
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&x.data()[i * n + start..i * n + end]);
        }
        let v = Tensor::new(vec![m, end - start], data)?;
        Ok(self.unary(v, Op::SliceCols { x: self.id, start }))
    }

    pub fn sum(self) -> Var<'g, T> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g, T> {
        let x = self.value();
        let v = Tensor::scalar(x.sum() / sc::<T>(x.len().max(1) as f64));
        self.unary(v, Op::Mean(self.id))
    }

    /// Mean over rows of `−log softmax(row)[target]`.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let (m, v) = x.dims2("cross_entropy")?;
        if m != targets.len() || m == 0 {
            return Err(TensorError::DimMismatch {
                op: "cross_entropy",
                lhs: x.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(TensorError::Contract(format!(
                "target {bad} out of range for {v} classes"
            )));
        }
        let mut total = T::zero();
        for (row, &t) in x.data().chunks(v).zip(targets) {
            total -= log_softmax_slice(row)[t];
        }
        let value = Tensor::scalar(total / sc::<T>(m as f64));
        Ok(self.unary(
            value,
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Mean over rows of `1 − cos(self_t, other_t)`; a row pair in which either
    /// vector has norm below `eps` contributes zero.
    pub fn cosine_distance_rows(self, other: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(TensorError::DimMismatch {
                op: "cosine_distance_rows",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, _) = a.dims2("cosine_distance_rows")?;
        let mut total = T::zero();
        for r in 0..m {
            let (x, y) = (a.row(r), b.row(r));
            let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
            if nx < sc(eps) || ny < sc(eps) {
                continue;
            }
            total += T::one() - dot(x, y) / (nx * ny);
        }
        let v = Tensor::scalar(total / sc::<T>(m.max(1) as f64));
        Ok(self.binary(
            other,
            v,
            Op::CosineDistance {
                a: self.id,
                b: other.id,
                eps,
            },
        ))
    }
}
