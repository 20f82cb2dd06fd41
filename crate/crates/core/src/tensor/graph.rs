//! Reverse-mode tape over row-major 2-D tensors.
//!
//! Every value is a `rows x cols` matrix; scalars are `1 x 1`. Nodes are
//! appended in evaluation order, so the tape is acyclic by construction and
//! backward is a single reverse sweep.

use super::kernels::{self, MatRef};
use super::params::{Grads, ParamId, ParamStore};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: Vec<(T, T)> },
    Gelu(Var),
    Embedding { table: Var, ids: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    Softmax(Var),
    MaskedFill { x: Var, mask: Vec<bool> },
    MeanPool(Var, usize),
    Repeat(Var, usize),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T> },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    rows: usize,
    cols: usize,
    value: Vec<T>,
}

/// Recording tape. Build a fresh one per step.
#[derive(Debug)]
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    backward_done: bool,
    live_bytes: usize,
    peak_bytes: usize,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            backward_done: false,
            live_bytes: 0,
            peak_bytes: 0,
        }
    }

    fn push(&mut self, op: Op<T>, rows: usize, cols: usize, value: Vec<T>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let saved = match &op {
            Op::Attention { probs, .. } | Op::CrossEntropy { probs, .. } => probs.len(),
            Op::LayerNorm { stats, .. } => 2 * stats.len(),
            _ => 0,
        };
        self.live_bytes += (value.len() + saved) * T::BYTES;
        self.peak_bytes = self.peak_bytes.max(self.live_bytes);
        self.nodes.push(Node { op, rows, cols, value });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        let n = &self.nodes[v.0];
        [n.rows, n.cols]
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest number of bytes held by forward values and saved buffers.
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }

    /// Constant input (receives no gradient).
    pub fn input(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::shape("input", &[value.len()], &[rows, cols]));
        }
        Ok(self.push(Op::Leaf, rows, cols, value))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(Op::Leaf, rows, cols, vec![T::zero(); rows * cols])
    }

    /// Parameter leaf; 1-D parameters become a single row.
    pub fn param(&mut self, id: ParamId) -> Var {
        let shape = self.params.shape(id);
        let (rows, cols) = match shape.len() {
            0 => (1, 1),
            1 => (1, shape[0]),
            _ => (shape[0], shape[1..].iter().product()),
        };
        let value = self.params.value(id).to_vec();
        self.push(Op::Param(id), rows, cols, value)
    }

    /// `[m, k] @ [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.shape(a);
        let [k2, n] = self.shape(b);
        if k != k2 {
            return Err(Error::shape("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(
            T::one(),
            MatRef::new(self.value(a), m, k),
            MatRef::new(self.value(b), k, n),
            T::zero(),
            &mut out,
            n,
        );
        Ok(self.push(Op::MatMul(a, b), m, n, out))
    }

    /// `x @ w + b` with `w: [in, out]` and optional `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [m, k] = self.shape(x);
        let [k2, n] = self.shape(w);
        if k != k2 {
            return Err(Error::shape("linear", &[m, k], &[k2, n]));
        }
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            if self.shape(b) != [1, n] {
                return Err(Error::shape("linear bias", &self.shape(b), &[1, n]));
            }
            let bias = self.value(b);
            out.chunks_mut(n).for_each(|row| row.copy_from_slice(bias));
        }
        kernels::gemm(
            T::one(),
            MatRef::new(self.value(x), m, k),
            MatRef::new(self.value(w), k, n),
            T::one(),
            &mut out,
            n,
        );
        Ok(self.push(Op::Linear { x, w, b }, m, n, out))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<[usize; 2]> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, &sa, &sb));
        }
        Ok(sa)
    }

    fn row_shape(&self, op: &'static str, a: Var, row: Var) -> Result<[usize; 2]> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != [1, sa[1]] {
            return Err(Error::shape(op, &sa, &sr));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let [r, c] = self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(Op::Add(a, b), r, c, out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [r, c] = self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(Op::Mul(a, b), r, c, out))
    }

    /// Adds a `[1, c]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let [r, c] = self.row_shape("add_row", a, row)?;
        let rv = self.value(row);
        let out = self.value(a).chunks(c).flat_map(|x| x.iter().zip(rv).map(|(&p, &q)| p + q)).collect();
        Ok(self.push(Op::AddRow(a, row), r, c, out))
    }

    /// Multiplies every row of `a` elementwise by a `[1, c]` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let [r, c] = self.row_shape("mul_row", a, row)?;
        let rv = self.value(row);
        let out = self.value(a).chunks(c).flat_map(|x| x.iter().zip(rv).map(|(&p, &q)| p * q)).collect();
        Ok(self.push(Op::MulRow(a, row), r, c, out))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let [r, c] = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * s).collect();
        self.push(Op::Scale(a, s), r, c, out)
    }

    /// Row-wise layer normalization with `[1, c]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let [r, c] = self.row_shape("layer_norm", x, gamma)?;
        self.row_shape("layer_norm", x, beta)?;
        let mut out = vec![T::zero(); r * c];
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let stats = xv
            .chunks(c)
            .zip(out.chunks_mut(c))
            .map(|(row, o)| kernels::layer_norm_row(row, g, b, o))
            .collect();
        Ok(self.push(Op::LayerNorm { x, gamma, beta, stats }, r, c, out))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let [r, c] = self.shape(x);
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        self.push(Op::Gelu(x), r, c, out)
    }

    /// Gathers rows of `table`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let [n, c] = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::shape("embedding", &[bad], &[n, c]));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        Ok(self.push(Op::Embedding { table, ids: ids.to_vec() }, ids.len(), c, out))
    }

    /// Multi-head scaled dot-product attention with heads laid out as
    /// contiguous column blocks. With `causal`, query `i` sees keys `0..=i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let [lq, d] = self.shape(q);
        let [lk, dk] = self.shape(k);
        if dk != d || heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention q/k", &[lq, d], &[lk, dk]));
        }
        self.same_shape("attention k/v", k, v)?;
        if causal && lq != lk {
            return Err(Error::shape("causal attention", &[lq, d], &[lk, dk]));
        }
        let mut out = vec![T::zero(); lq * d];
        let mut probs = vec![T::zero(); heads * lq * lk];
        attention_forward(
            self.value(q),
            self.value(k),
            self.value(v),
            lq,
            lk,
            d,
            heads,
            causal,
            &mut probs,
            &mut out,
        );
        Ok(self.push(Op::Attention { q, k, v, heads, probs }, lq, d, out))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let [r, c] = self.shape(x);
        let mut out = self.value(x).to_vec();
        out.chunks_mut(c).for_each(kernels::softmax_row);
        self.push(Op::Softmax(x), r, c, out)
    }

    /// Replaces entries where `mask` is true with `fill`.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], fill: T) -> Result<Var> {
        let [r, c] = self.shape(x);
        if mask.len() != r * c {
            return Err(Error::shape("masked_fill", &[r, c], &[mask.len()]));
        }
        let out = self.value(x).iter().zip(mask).map(|(&v, &m)| if m { fill } else { v }).collect();
        Ok(self.push(Op::MaskedFill { x, mask: mask.to_vec() }, r, c, out))
    }

    /// Mean over consecutive groups of `k` rows.
    pub fn mean_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        if k == 0 || r % k != 0 {
            return Err(Error::shape("mean_pool", &[r, c], &[k]));
        }
        let inv = T::one() / T::c(k as f64);
        let xv = self.value(x);
        let mut out = vec![T::zero(); r / k * c];
        for (g, o) in out.chunks_mut(c).enumerate() {
            for row in xv[g * k * c..(g + 1) * k * c].chunks(c) {
                o.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
            }
            o.iter_mut().for_each(|a| *a *= inv);
        }
        Ok(self.push(Op::MeanPool(x, k), r / k, c, out))
    }

    /// Duplicates each row `k` times.
    pub fn repeat(&mut self, x: Var, k: usize) -> Var {
        let [r, c] = self.shape(x);
        let mut out = Vec::with_capacity(r * k * c);
        for row in self.value(x).chunks(c) {
            for _ in 0..k {
                out.extend_from_slice(row);
            }
        }
        self.push(Op::Repeat(x, k), r * k, c, out)
    }

    /// Stacks rows of inputs with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map(|&p| self.shape(p)[1]).unwrap_or(0);
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[1] != c {
                return Err(Error::shape("concat_rows", &[rows, c], &s));
            }
            rows += s[0];
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(Op::Concat(parts.to_vec()), rows, c, out))
    }

    /// Rows `[start, start + len)`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        if start + len > r {
            return Err(Error::shape("slice_rows", &[r, c], &[start, len]));
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        Ok(self.push(Op::Slice { x, start }, len, c, out))
    }

    /// Weighted mean cross-entropy of row-wise logits against class targets;
    /// rows with zero weight contribute nothing (including to gradients).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let [r, c] = self.shape(logits);
        if targets.len() != r || weights.len() != r {
            return Err(Error::shape("cross_entropy", &[r, c], &[targets.len(), weights.len()]));
        }
        let wsum: T = weights.iter().copied().sum();
        if wsum <= T::zero() {
            return Err(Error::EmptyLoss);
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = T::zero();
        for ((row, &t), &w) in probs.chunks_mut(c).zip(targets).zip(weights) {
            if w == T::zero() {
                row.iter_mut().for_each(|v| *v = T::zero());
                continue;
            }
            if t >= c {
                return Err(Error::shape("cross_entropy target", &[t], &[c]));
            }
            kernels::softmax_row(row);
            loss -= w * row[t].ln();
        }
        let weights = weights.iter().map(|&w| w / wsum).collect();
        let value = vec![loss / wsum];
        Ok(self.push(
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights, probs },
            1,
            1,
            value,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(Op::Sum(x), 1, 1, vec![s])
    }

    /// Propagates gradients of scalar `loss`, accumulating into `grads`.
    /// Allowed once per tape.
    pub fn backward(&mut self, loss: Var, grads: &mut Grads<T>) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autodiff("backward already ran on this tape".into()));
        }
        if self.shape(loss) != [1, 1] {
            return Err(Error::Autodiff(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        if grads.values.len() != self.params.len() {
            return Err(Error::InternalState("gradient buffers do not match parameters".into()));
        }
        self.backward_done = true;
        let mut g: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            self.backward_node(i, &gi, &mut g, grads);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, gi: &[T], g: &mut [Option<Vec<T>>], grads: &mut Grads<T>) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                grads.values[id.0].iter_mut().zip(gi).for_each(|(a, &b)| *a += b);
            }
            Op::MatMul(a, b) => {
                let k = self.nodes[a.0].cols;
                let ga = acc(g, self, *a);
                kernels::gemm(
                    T::one(),
                    MatRef::new(gi, rows, cols),
                    MatRef::new(&self.nodes[b.0].value, k, cols).t(),
                    T::one(),
                    ga,
                    k,
                );
                let gb = acc(g, self, *b);
                kernels::gemm(
                    T::one(),
                    MatRef::new(&self.nodes[a.0].value, rows, k).t(),
                    MatRef::new(gi, rows, cols),
                    T::one(),
                    gb,
                    cols,
                );
            }
            Op::Linear { x, w, b } => {
                let k = self.nodes[x.0].cols;
                let gx = acc(g, self, *x);
                kernels::gemm(
                    T::one(),
                    MatRef::new(gi, rows, cols),
                    MatRef::new(&self.nodes[w.0].value, k, cols).t(),
                    T::one(),
                    gx,
                    k,
                );
                let gw = acc(g, self, *w);
                kernels::gemm(
                    T::one(),
                    MatRef::new(&self.nodes[x.0].value, rows, k).t(),
                    MatRef::new(gi, rows, cols),
                    T::one(),
                    gw,
                    cols,
                );
                if let Some(b) = b {
                    let gb = acc(g, self, *b);
                    for row in gi.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(acc(g, self, *a), gi);
                add_into(acc(g, self, *b), gi);
            }
            Op::AddRow(a, row) => {
                add_into(acc(g, self, *a), gi);
                let gr = acc(g, self, *row);
                for r in gi.chunks(cols) {
                    add_into(gr, r);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let ga = acc(g, self, *a);
                ga.iter_mut().zip(gi).zip(bv).for_each(|((d, &o), &y)| *d += o * y);
                let gb = acc(g, self, *b);
                gb.iter_mut().zip(gi).zip(av).for_each(|((d, &o), &x)| *d += o * x);
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
                let ga = acc(g, self, *a);
                for (gr, o) in ga.chunks_mut(cols).zip(gi.chunks(cols)) {
                    gr.iter_mut().zip(o).zip(rv).for_each(|((d, &o), &y)| *d += o * y);
                }
                let grow = acc(g, self, *row);
                for (xr, o) in av.chunks(cols).zip(gi.chunks(cols)) {
                    grow.iter_mut().zip(o).zip(xr).for_each(|((d, &o), &x)| *d += o * x);
                }
            }
            Op::Scale(a, s) => {
                let ga = acc(g, self, *a);
                ga.iter_mut().zip(gi).for_each(|(d, &o)| *d += o * *s);
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let xv = &self.nodes[x.0].value;
                let gv = &self.nodes[gamma.0].value;
                let n = T::c(cols as f64);
                let mut dgamma = vec![T::zero(); cols];
                let mut dbeta = vec![T::zero(); cols];
                let mut xhat = vec![T::zero(); cols];
                let mut dxhat = vec![T::zero(); cols];
                let gx = acc(g, self, *x);
                for r in 0..rows {
                    let (mean, rstd) = stats[r];
                    let xr = &xv[r * cols..(r + 1) * cols];
                    let o = &gi[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        xhat[j] = (xr[j] - mean) * rstd;
                        dxhat[j] = o[j] * gv[j];
                        dgamma[j] += o[j] * xhat[j];
                        dbeta[j] += o[j];
                    }
                    let s1: T = dxhat.iter().copied().sum();
                    let s2: T = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
                    let gxr = &mut gx[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        gxr[j] += rstd / n * (n * dxhat[j] - s1 - xhat[j] * s2);
                    }
                }
                add_into(acc(g, self, *gamma), &dgamma);
                add_into(acc(g, self, *beta), &dbeta);
            }
            Op::Gelu(x) => {
                let xv = &self.nodes[x.0].value;
                let gx = acc(g, self, *x);
                gx.iter_mut().zip(gi).zip(xv).for_each(|((d, &o), &v)| *d += o * kernels::gelu_grad(v));
            }
            Op::Embedding { table, ids } => {
                let gt = acc(g, self, *table);
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * cols..(id + 1) * cols], &gi[r * cols..(r + 1) * cols]);
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let lk = self.nodes[k.0].rows;
                let mut dq = vec![T::zero(); rows * cols];
                let mut dk = vec![T::zero(); lk * cols];
                let mut dv = vec![T::zero(); lk * cols];
                attention_backward(
                    &self.nodes[q.0].value,
                    &self.nodes[k.0].value,
                    &self.nodes[v.0].value,
                    probs,
                    gi,
                    rows,
                    lk,
                    cols,
                    *heads,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                add_into(acc(g, self, *q), &dq);
                add_into(acc(g, self, *k), &dk);
                add_into(acc(g, self, *v), &dv);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let gx = acc(g, self, *x);
                for ((gr, yr), o) in gx.chunks_mut(cols).zip(y.chunks(cols)).zip(gi.chunks(cols)) {
                    let s = kernels::dot(yr, o);
                    gr.iter_mut().zip(yr).zip(o).for_each(|((d, &y), &o)| *d += y * (o - s));
                }
            }
            Op::MaskedFill { x, mask } => {
                let gx = acc(g, self, *x);
                gx.iter_mut().zip(gi).zip(mask).for_each(|((d, &o), &m)| {
                    if !m {
                        *d += o
                    }
                });
            }
            Op::MeanPool(x, k) => {
                let inv = T::one() / T::c(*k as f64);
                let gx = acc(g, self, *x);
                for (r, row) in gx.chunks_mut(cols).enumerate() {
                    let o = &gi[(r / k) * cols..(r / k + 1) * cols];
                    row.iter_mut().zip(o).for_each(|(d, &o)| *d += o * inv);
                }
            }
            Op::Repeat(x, k) => {
                let gx = acc(g, self, *x);
                for (r, o) in gi.chunks(cols).enumerate() {
                    add_into(&mut gx[(r / k) * cols..(r / k + 1) * cols], o);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    add_into(acc(g, self, p), &gi[off..off + n]);
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let gx = acc(g, self, *x);
                add_into(&mut gx[start * cols..(start + rows) * cols], gi);
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let c = self.nodes[logits.0].cols;
                let up = gi[0];
                let gl = acc(g, self, *logits);
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let p = &probs[r * c..(r + 1) * c];
                    let d = &mut gl[r * c..(r + 1) * c];
                    d.iter_mut().zip(p).for_each(|(d, &p)| *d += up * w * p);
                    d[t] -= up * w;
                }
            }
            Op::Sum(x) => {
                let up = gi[0];
                acc(g, self, *x).iter_mut().for_each(|d| *d += up);
            }
        }
    }
}

fn acc<'a, T: Scalar>(g: &'a mut [Option<Vec<T>>], graph: &Graph<T>, v: Var) -> &'a mut [T] {
    g[v.0].get_or_insert_with(|| vec![T::zero(); graph.nodes[v.0].value.len()])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

/// Forward attention; `probs` is `[heads, lq, lk]`, masked entries exactly 0.
#[allow(clippy::too_many_arguments)]
pub fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    lq: usize,
    lk: usize,
    d: usize,
    heads: usize,
    causal: bool,
    probs: &mut [T],
    out: &mut [T],
) {
    let hd = d / heads;
    let scale = T::one() / T::c(hd as f64).sqrt();
    for h in 0..heads {
        let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
        kernels::gemm(
            scale,
            MatRef::cols_of(q, lq, d, h * hd, hd),
            MatRef::cols_of(k, lk, d, h * hd, hd).t(),
            T::zero(),
            p,
            lk,
        );
        for (i, row) in p.chunks_mut(lk).enumerate() {
            let visible = if causal { i + 1 } else { lk };
            kernels::softmax_row(&mut row[..visible]);
            row[visible..].iter_mut().for_each(|x| *x = T::zero());
        }
        kernels::gemm(
            T::one(),
            MatRef::new(p, lq, lk),
            MatRef::cols_of(v, lk, d, h * hd, hd),
            T::zero(),
            &mut out[h * hd..],
            d,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    lq: usize,
    lk: usize,
    d: usize,
    heads: usize,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let hd = d / heads;
    let scale = T::one() / T::c(hd as f64).sqrt();
    let mut ds = vec![T::zero(); lq * lk];
    for h in 0..heads {
        let p = &probs[h * lq * lk..(h + 1) * lq * lk];
        let dout_h = MatRef::cols_of(dout, lq, d, h * hd, hd);
        // dV = P^T dO
        kernels::gemm(T::one(), MatRef::new(p, lq, lk).t(), dout_h, T::zero(), &mut dv[h * hd..], d);
        // dP = dO V^T, then softmax backward in place.
        kernels::gemm(
            T::one(),
            dout_h,
            MatRef::cols_of(v, lk, d, h * hd, hd).t(),
            T::zero(),
            &mut ds,
            lk,
        );
        for (dsr, pr) in ds.chunks_mut(lk).zip(p.chunks(lk)) {
            let s = kernels::dot(dsr, pr);
            dsr.iter_mut().zip(pr).for_each(|(x, &p)| *x = p * (*x - s));
        }
        kernels::gemm(
            scale,
            MatRef::new(&ds, lq, lk),
            MatRef::cols_of(k, lk, d, h * hd, hd),
            T::zero(),
            &mut dq[h * hd..],
            d,
        );
        kernels::gemm(
            scale,
            MatRef::new(&ds, lq, lk).t(),
            MatRef::cols_of(q, lq, d, h * hd, hd),
            T::zero(),
            &mut dk[h * hd..],
            d,
        );
    }
}
