use crate::error::{Error, Result};

use super::kernels;
use super::{Float, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Slice {
        src: Var,
        row0: usize,
        col0: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Softmax {
        src: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        rows: Vec<(usize, usize)>,
        probs: Vec<T>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Define-by-run tape. Nodes are appended in execution order, so walking the
/// list backwards is a reverse topological order. A graph supports a single
/// backward pass.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        self.grads.push(None);
        v
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` is a
    /// leaf that requires grad.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads[v.0].take()
    }

    /// Number of gradient buffers currently allocated.
    pub fn allocated_grads(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut out = vec![T::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(n, m, out)?, Op::Transpose(a), rg, "transpose")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(shape, data)?, Op::Scale(a, c), rg, "scale")
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(row).numel() != n {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", self.value(a).shape(), self.value(row).shape()),
            ));
        }
        let bias = self.value(row).data();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            data.extend(src[i * n..(i + 1) * n].iter().zip(bias).map(|(&x, &b)| x + b));
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(row);
        self.push(Tensor::new(shape, data)?, Op::AddRow(a, row), rg, "add_row")
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>, name: &'static str) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(shape, data)?, op, rg, name)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, T::tanh, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a), "sigmoid")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, kernels::gelu, Op::Gelu(a), "gelu")
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let cols = self.dims(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::shape("concat_rows", format!("cols {c} vs {cols}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
            "concat_rows",
        )
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.dims(first).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(Error::shape("concat_cols", format!("rows {r} vs {rows}")));
            }
            cols += c;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
            "concat_cols",
        )
    }

    /// Sub-matrix `rows x cols` starting at `(row0, col0)`.
    pub fn slice(&mut self, a: Var, row0: usize, rows: usize, col0: usize, cols: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if rows == 0 || cols == 0 || row0 + rows > m || col0 + cols > n {
            return Err(Error::shape(
                "slice",
                format!("[{row0}+{rows}, {col0}+{cols}] of {m}x{n}"),
            ));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * cols);
        for i in row0..row0 + rows {
            data.extend_from_slice(&src[i * n + col0..i * n + col0 + cols]);
        }
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::Slice { src: a, row0, col0 },
            rg,
            "slice",
        )
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (v, d) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::shape("embedding", "no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        let mut idx = Vec::with_capacity(ids.len());
        for &id in ids {
            let id = id as usize;
            if id >= v {
                return Err(Error::shape("embedding", format!("id {id} >= table rows {v}")));
            }
            data.extend_from_slice(self.value(table).row(id));
            idx.push(id);
        }
        let rg = self.rg(table);
        self.push(
            Tensor::matrix(ids.len(), d, data)?,
            Op::Embedding { table, ids: idx },
            rg,
            "embedding",
        )
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, false)
    }

    /// Row-wise softmax where row `i` only sees columns `j <= i + (cols - rows)`.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if n < m {
            return Err(Error::shape("causal_softmax", format!("{m}x{n}")));
        }
        self.softmax_impl(a, true)
    }

    fn softmax_impl(&mut self, a: Var, causal: bool) -> Result<Var> {
        let (m, n) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            let valid = if causal { i + 1 + (n - m) } else { n };
            kernels::softmax_row(&mut data[i * n..(i + 1) * n], valid);
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(shape, data)?, Op::Softmax { src: a }, rg, "softmax")
    }

    /// Softmax along `axis` of a matrix (0 = down columns, 1 = along rows).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        match axis {
            1 => self.softmax_rows(a),
            0 => {
                let t = self.transpose(a)?;
                let s = self.softmax_rows(t)?;
                self.transpose(s)
            }
            _ => Err(Error::shape("softmax", format!("axis {axis} of a matrix"))),
        }
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (m, n) = self.dims(x);
        if n < 2 {
            return Err(Error::shape("layer_norm", format!("normalized length {n} < 2")));
        }
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(Error::shape("layer_norm", "gain/bias length"));
        }
        let mut out = vec![T::ZERO; m * n];
        let mut xhat = vec![T::ZERO; m * n];
        let mut rstd = Vec::with_capacity(m);
        {
            let xs = self.value(x).data();
            let g = self.value(gain).data();
            let b = self.value(bias).data();
            for i in 0..m {
                let r = i * n..(i + 1) * n;
                rstd.push(kernels::layer_norm_row(
                    &xs[r.clone()],
                    g,
                    b,
                    eps,
                    &mut xhat[r.clone()],
                    &mut out[r],
                ));
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
            "layer_norm",
        )
    }

    /// Mean negative log-likelihood of `targets` over rows where `mask` is set.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], mask: &[bool]) -> Result<Var> {
        let (m, v) = self.dims(logits);
        if targets.len() != m || mask.len() != m {
            return Err(Error::shape(
                "cross_entropy",
                format!("{m} rows, {} targets, {} mask", targets.len(), mask.len()),
            ));
        }
        let rows: Vec<(usize, usize)> = (0..m).filter(|&i| mask[i]).map(|i| (i, targets[i] as usize)).collect();
        if rows.is_empty() {
            return Err(Error::EmptyMask);
        }
        if let Some(&(_, t)) = rows.iter().find(|&&(_, t)| t >= v) {
            return Err(Error::shape("cross_entropy", format!("target {t} >= vocab {v}")));
        }
        let src = self.value(logits).data();
        let mut probs = Vec::with_capacity(rows.len() * v);
        let mut total = T::ZERO;
        for &(i, t) in &rows {
            let row = &src[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(row[0], |a, b| a.max(b));
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            total += lse - row[t];
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        let loss = total / T::from_f64(rows.len() as f64);
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, rows, probs },
            rg,
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    fn grad_buf<'g>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'g mut Vec<T> {
        grads[v.0].get_or_insert_with(|| vec![T::ZERO; nodes[v.0].value.numel()])
    }

    /// Reverse pass from a scalar `loss`. Only leaves with `requires_grad`
    /// keep their gradient afterwards; frozen values never get a buffer.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;
        let seeded = self.rg(loss);
        let Graph { nodes, grads, .. } = self;
        if seeded {
            grads[loss.0] = Some(vec![T::ONE]);
        }

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let (m, n) = (node.value.rows(), node.value.cols());

            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (am, ak) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                    if nodes[a.0].requires_grad {
                        let bv = nodes[b.0].value.data();
                        let ga = Self::grad_buf(grads, nodes, *a);
                        // dA = G · Bᵀ
                        T::gemm(am, n, ak, &g, (n as isize, 1), bv, (1, n as isize), true, ga);
                    }
                    if nodes[b.0].requires_grad {
                        let av = nodes[a.0].value.data();
                        let gb = Self::grad_buf(grads, nodes, *b);
                        // dB = Aᵀ · G
                        T::gemm(ak, am, n, av, (1, ak as isize), &g, (n as isize, 1), true, gb);
                    }
                }
                Op::Transpose(a) => {
                    let ga = Self::grad_buf(grads, nodes, *a);
                    // node is m x n, input is n x m
                    for i in 0..m {
                        for j in 0..n {
                            ga[j * m + i] += g[i * n + j];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if nodes[v.0].requires_grad {
                            let gv = Self::grad_buf(grads, nodes, *v);
                            gv.iter_mut().zip(&g).for_each(|(x, &y)| *x += y);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (v, other) in [(a, b), (b, a)] {
                        if nodes[v.0].requires_grad {
                            let ov = nodes[other.0].value.data();
                            let gv = Self::grad_buf(grads, nodes, *v);
                            for i in 0..gv.len() {
                                gv[i] += g[i] * ov[i];
                            }
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let ga = Self::grad_buf(grads, nodes, *a);
                    ga.iter_mut().zip(&g).for_each(|(x, &y)| *x += y * *c);
                }
                Op::AddRow(a, row) => {
                    if nodes[a.0].requires_grad {
                        let ga = Self::grad_buf(grads, nodes, *a);
                        ga.iter_mut().zip(&g).for_each(|(x, &y)| *x += y);
                    }
                    if nodes[row.0].requires_grad {
                        let gr = Self::grad_buf(grads, nodes, *row);
                        for i in 0..m {
                            for j in 0..n {
                                gr[j] += g[i * n + j];
                            }
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let ga = Self::grad_buf(grads, nodes, *a);
                    for i in 0..ga.len() {
                        ga[i] += g[i] * (T::ONE - y[i] * y[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let ga = Self::grad_buf(grads, nodes, *a);
                    for i in 0..ga.len() {
                        ga[i] += g[i] * y[i] * (T::ONE - y[i]);
                    }
                }
                Op::Gelu(a) => {
                    let x = nodes[a.0].value.data();
                    let ga = Self::grad_buf(grads, nodes, *a);
                    for i in 0..ga.len() {
                        ga[i] += g[i] * kernels::gelu_grad(x[i]);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.numel();
                        if nodes[p.0].requires_grad {
                            let gp = Self::grad_buf(grads, nodes, *p);
                            gp.iter_mut().zip(&g[offset..offset + len]).for_each(|(x, &y)| *x += y);
                        }
                        offset += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut col0 = 0;
                    for p in parts {
                        let pc = nodes[p.0].value.cols();
                        if nodes[p.0].requires_grad {
                            let gp = Self::grad_buf(grads, nodes, *p);
                            for i in 0..m {
                                for j in 0..pc {
                                    gp[i * pc + j] += g[i * n + col0 + j];
                                }
                            }
                        }
                        col0 += pc;
                    }
                }
                Op::Slice { src, row0, col0 } => {
                    let sn = nodes[src.0].value.cols();
                    let gs = Self::grad_buf(grads, nodes, *src);
                    for i in 0..m {
                        let base = (row0 + i) * sn + col0;
                        for j in 0..n {
                            gs[base + j] += g[i * n + j];
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let gt = Self::grad_buf(grads, nodes, *table);
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..n {
                            gt[id * n + j] += g[i * n + j];
                        }
                    }
                }
                Op::Softmax { src } => {
                    let y = node.value.data();
                    let gs = Self::grad_buf(grads, nodes, *src);
                    for i in 0..m {
                        let r = i * n..(i + 1) * n;
                        let dot: T = y[r.clone()].iter().zip(&g[r.clone()]).map(|(&a, &b)| a * b).sum();
                        for k in r {
                            gs[k] += y[k] * (g[k] - dot);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    if nodes[gain.0].requires_grad {
                        let gg = Self::grad_buf(grads, nodes, *gain);
                        for i in 0..m {
                            for j in 0..n {
                                gg[j] += g[i * n + j] * xhat[i * n + j];
                            }
                        }
                    }
                    if nodes[bias.0].requires_grad {
                        let gb = Self::grad_buf(grads, nodes, *bias);
                        for i in 0..m {
                            for j in 0..n {
                                gb[j] += g[i * n + j];
                            }
                        }
                    }
                    if nodes[x.0].requires_grad {
                        let gain_v = nodes[gain.0].value.data();
                        let inv_n = T::ONE / T::from_f64(n as f64);
                        let mut dxhat = vec![T::ZERO; n];
                        let gx = Self::grad_buf(grads, nodes, *x);
                        for i in 0..m {
                            let mut mean_d = T::ZERO;
                            let mut mean_dx = T::ZERO;
                            for j in 0..n {
                                dxhat[j] = g[i * n + j] * gain_v[j];
                                mean_d += dxhat[j];
                                mean_dx += dxhat[j] * xhat[i * n + j];
                            }
                            mean_d *= inv_n;
                            mean_dx *= inv_n;
                            for j in 0..n {
                                gx[i * n + j] += rstd[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, rows, probs } => {
                    let v = nodes[logits.0].value.cols();
                    let scale = g[0] / T::from_f64(rows.len() as f64);
                    let gl = Self::grad_buf(grads, nodes, *logits);
                    for (r, &(i, t)) in rows.iter().enumerate() {
                        for j in 0..v {
                            gl[i * v + j] += probs[r * v + j] * scale;
                        }
                        gl[i * v + t] -= scale;
                    }
                }
                Op::Sum(a) => {
                    let ga = Self::grad_buf(grads, nodes, *a);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
        }

        for (idx, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            } else if node.requires_grad {
                let buf = Self::grad_buf(grads, nodes, Var(idx));
                if buf.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("backward"));
                }
            }
        }
        Ok(())
    }
}
