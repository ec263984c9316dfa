//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! A [`Graph`] records every operation applied to its variables. Parameters
//! are borrowed from a [`ParamStore`] and never copied; [`Graph::backward`]
//! walks the tape in reverse and returns the gradient of each parameter that
//! contributed to the output.

use std::collections::HashMap;

use super::{Gradients, ParamId, ParamStore, Tensor, TensorError};

const LN_EPS: f64 = 1e-5;
const COSINE_EPS: f64 = 1e-12;
const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    BroadcastRows(Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Softmax(Var),
    MaskedMaxPool(Var, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    SegmentSum(Var, Vec<(usize, usize)>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CosineRows(Var, Var),
    WeightedSum(Var, Tensor),
    SoftmaxBce {
        logits: Var,
        labels: Vec<f64>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Computation tape bound to an immutable parameter snapshot.
pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// `c = a·b (+ beta·c)` with arbitrary strides, through `matrixmultiply`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover the strided extents asserted by the callers'
    // shape checks; `c` is a dense m×n block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn shape_err(op: &'static str, tensors: &[&Tensor]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        shapes: tensors.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.all_finite(), "non-finite output in forward pass");
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        let (r, c) = (value.rows(), value.cols());
        let value = if value.shape().len() == 2 {
            value
        } else {
            Tensor::matrix(r, c, value.into_data()).expect("reshape preserves length")
        };
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", &[self.value(a), self.value(b)]));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
            0.0,
        );
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    /// `[m,k]·[n,k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul_t", &[self.value(a), self.value(b)]));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (1, k),
            &mut out,
            0.0,
        );
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulT(a, b)))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(shape_err(op_name, &[ta, tb]));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::matrix(ta.rows(), ta.cols(), data)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[1,n]` row (typically a bias) to every row of `[m,n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", &[ta, tr]));
        }
        let n = ta.cols();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (x, b) in chunk.iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let out = Tensor::matrix(ta.rows(), n, data)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Repeats a `[1,n]` row `m` times.
    pub fn broadcast_rows(&mut self, row: Var, m: usize) -> Result<Var, TensorError> {
        let tr = self.value(row);
        if tr.rows() != 1 {
            return Err(shape_err("broadcast_rows", &[tr]));
        }
        let mut data = Vec::with_capacity(m * tr.cols());
        for _ in 0..m {
            data.extend_from_slice(tr.data());
        }
        let out = Tensor::matrix(m, tr.cols(), data)?;
        Ok(self.push(out, Op::BroadcastRows(row)))
    }

    /// Scales row `i` of `[m,n]` by entry `i` of the column `[m,1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, TensorError> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(shape_err("mul_col", &[ta, tc]));
        }
        let n = ta.cols();
        let mut data = ta.data().to_vec();
        for (r, chunk) in data.chunks_mut(n.max(1)).enumerate() {
            let s = tc.data()[r];
            chunk.iter_mut().for_each(|x| *x *= s);
        }
        let out = Tensor::matrix(ta.rows(), n, data)?;
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat_cols"))?;
        let m = self.value(*first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != m) {
            let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            return Err(shape_err("concat_cols", &ts));
        }
        let n: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(m, n, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat_rows"))?;
        let n = self.value(*first).cols();
        if parts.iter().any(|&p| self.value(p).cols() != n) {
            let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            return Err(shape_err("concat_rows", &ts));
        }
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let t = self.value(p);
            m += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(m, n, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Selects rows by index; embedding lookup is `gather_rows(table, ids)`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a);
        let n = t.cols();
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                bound: t.rows(),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(idx.len(), n, data)?;
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(shape_err("slice_cols", &[t]));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let out = Tensor::matrix(t.rows(), len, data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Row-wise softmax. Entries with `mask == false` get exactly zero weight;
    /// a fully masked row is all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let t = self.value(a);
        if let Some(m) = mask {
            if m.len() != t.len() {
                return Err(TensorError::MaskLength {
                    op: "softmax_rows",
                    expected: t.len(),
                    got: m.len(),
                });
            }
        }
        let n = t.cols();
        let mut data = vec![0.0; t.len()];
        for r in 0..t.rows() {
            let row = t.row(r);
            let keep = |j: usize| mask.is_none_or(|m| m[r * n + j]);
            let max = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in (0..n).filter(|&j| keep(j)) {
                let e = (row[j] - max).exp();
                data[r * n + j] = e;
                z += e;
            }
            for j in 0..n {
                data[r * n + j] /= z;
            }
        }
        let out = Tensor::matrix(t.rows(), n, data)?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Max over the valid time steps of each sequence in a `[B·L, d]` stack.
    /// Returns `[B, d]`; a sequence with no valid step pools to zeros.
    pub fn masked_max_pool(
        &mut self,
        a: Var,
        seq_len: usize,
        mask: &[bool],
    ) -> Result<Var, TensorError> {
        let t = self.value(a);
        if seq_len == 0 || t.rows() % seq_len != 0 || mask.len() != t.rows() {
            return Err(shape_err("masked_max_pool", &[t]));
        }
        let (b, d) = (t.rows() / seq_len, t.cols());
        let mut data = vec![0.0; b * d];
        let mut argmax = vec![usize::MAX; b * d];
        for s in 0..b {
            for j in 0..d {
                let mut best = f64::NEG_INFINITY;
                for i in 0..seq_len {
                    let r = s * seq_len + i;
                    if mask[r] && t.get(r, j) > best {
                        best = t.get(r, j);
                        argmax[s * d + j] = r;
                    }
                }
                if argmax[s * d + j] != usize::MAX {
                    data[s * d + j] = best;
                }
            }
        }
        let out = Tensor::matrix(b, d, data)?;
        Ok(self.push(out, Op::MaskedMaxPool(a, argmax)))
    }

    /// Max-over-time within consecutive row segments of the given lengths.
    pub fn segment_max(&mut self, a: Var, lengths: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a);
        if lengths.iter().sum::<usize>() != t.rows() || lengths.iter().any(|&l| l == 0) {
            return Err(shape_err("segment_max", &[t]));
        }
        let d = t.cols();
        let mut data = vec![0.0; lengths.len() * d];
        let mut argmax = vec![0; lengths.len() * d];
        let mut start = 0;
        for (s, &len) in lengths.iter().enumerate() {
            for j in 0..d {
                let mut best = start;
                for r in start + 1..start + len {
                    if t.get(r, j) > t.get(best, j) {
                        best = r;
                    }
                }
                data[s * d + j] = t.get(best, j);
                argmax[s * d + j] = best;
            }
            start += len;
        }
        let out = Tensor::matrix(lengths.len(), d, data)?;
        Ok(self.push(out, Op::SegmentMax(a, argmax)))
    }

    /// Sums row ranges `(start, len)`; an empty range yields a zero row.
    pub fn segment_sum(&mut self, a: Var, ranges: &[(usize, usize)]) -> Result<Var, TensorError> {
        let t = self.value(a);
        if ranges.iter().any(|&(s, l)| s + l > t.rows()) {
            return Err(shape_err("segment_sum", &[t]));
        }
        let d = t.cols();
        let mut data = vec![0.0; ranges.len() * d];
        for (s, &(start, len)) in ranges.iter().enumerate() {
            for r in start..start + len {
                for j in 0..d {
                    data[s * d + j] += t.get(r, j);
                }
            }
        }
        let out = Tensor::matrix(ranges.len(), d, data)?;
        Ok(self.push(out, Op::SegmentSum(a, ranges.to_vec())))
    }

    /// Scaled dot-product multi-head self-attention over a stack of `B`
    /// sequences of length `seq_len`; `q`, `k`, `v` are `[B·L, d]`.
    /// Keys with `mask == false` receive zero attention weight.
    pub fn self_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        mask: &[bool],
    ) -> Result<Var, TensorError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = (tq.rows(), tq.cols());
        if tk.rows() != rows
            || tv.rows() != rows
            || tk.cols() != d
            || tv.cols() != d
            || seq_len == 0
            || rows % seq_len != 0
            || mask.len() != rows
        {
            return Err(shape_err("self_attention", &[tq, tk, tv]));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Config(format!(
                "hidden size {d} not divisible by {heads} heads"
            )));
        }
        let b = rows / seq_len;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut out = vec![0.0; rows * d];
        let mut probs = vec![0.0; b * heads * seq_len * seq_len];
        for s in 0..b {
            let base = s * seq_len;
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq_len {
                    let p = &mut probs[((s * heads + h) * seq_len + i) * seq_len..][..seq_len];
                    let qi = &qd[(base + i) * d + off..][..dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..seq_len {
                        if mask[base + j] {
                            let kj = &kd[(base + j) * d + off..][..dh];
                            let dot: f64 = qi.iter().zip(kj).map(|(x, y)| x * y).sum();
                            p[j] = dot * scale;
                            max = max.max(p[j]);
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut z = 0.0;
                    for j in 0..seq_len {
                        if mask[base + j] {
                            p[j] = (p[j] - max).exp();
                            z += p[j];
                        } else {
                            p[j] = 0.0;
                        }
                    }
                    let o = &mut out[(base + i) * d + off..][..dh];
                    for j in 0..seq_len {
                        p[j] /= z;
                        if p[j] != 0.0 {
                            let vj = &vd[(base + j) * d + off..][..dh];
                            for (oc, vc) in o.iter_mut().zip(vj) {
                                *oc += p[j] * vc;
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::matrix(rows, d, out)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            },
        ))
    }

    /// Row-wise layer normalisation with `[1,d]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.cols();
        if tg.len() != d || tb.len() != d {
            return Err(shape_err("layer_norm", &[tx, tg, tb]));
        }
        let mut normed = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; tx.rows()];
        let mut out = vec![0.0; tx.len()];
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let n = (row[j] - mean) * is;
                normed[r * d + j] = n;
                out[r * d + j] = n * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::matrix(tx.rows(), d, out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
        ))
    }

    /// Row-wise cosine similarity of two `[m,d]` matrices, `[m,1]`.
    /// Defined as 0 where either row norm is below 1e-12.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(shape_err("cosine_rows", &[ta, tb]));
        }
        let data = (0..ta.rows())
            .map(|r| cosine_parts(ta.row(r), tb.row(r)).map_or(0.0, |c| c.cos))
            .collect();
        let out = Tensor::matrix(ta.rows(), 1, data)?;
        Ok(self.push(out, Op::CosineRows(a, b)))
    }

    /// `Σ a ⊙ w` for a constant weight tensor; used to reduce outputs to a scalar.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.len() != weights.len() {
            return Err(shape_err("weighted_sum", &[t, &weights]));
        }
        let s = t.data().iter().zip(weights.data()).map(|(x, w)| x * w).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, weights)))
    }

    /// Mean binary negative log-likelihood of class 1 under a two-way softmax
    /// over `[m,2]` logits, with the log argument clamped at 1e-12.
    pub fn softmax_bce(&mut self, logits: Var, labels: &[f64]) -> Result<Var, TensorError> {
        let t = self.value(logits);
        if t.cols() != 2 || t.rows() != labels.len() || labels.is_empty() {
            return Err(shape_err("softmax_bce", &[t]));
        }
        let m = labels.len();
        let mut probs = Vec::with_capacity(m);
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let p1 = two_way_softmax(t.get(r, 0), t.get(r, 1));
            probs.push(p1);
            loss -= y * p1.max(LOG_CLAMP).ln() + (1.0 - y) * (1.0 - p1).max(LOG_CLAMP).ln();
        }
        let out = Tensor::scalar(loss / m as f64);
        Ok(self.push(
            out,
            Op::SoftmaxBce {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        let seed = Tensor::scalar(1.0);
        self.backward_from(output, seed)
    }

    pub fn backward_from(&self, output: Var, seed: Tensor) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut result = Gradients::default();
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, g, &mut grads, &mut result);
        }
        result
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        result: &mut Gradients,
    ) {
        let out = self.nodes[idx].value.as_ref();
        let acc = |grads: &mut [Option<Tensor>], v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &self.nodes[idx].op {
            Op::Input => {}
            Op::Param(id) => {
                result.0.insert(*id, g);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), (n, 1), tb.data(), (1, n), &mut da, 0.0);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, ta.data(), (1, k), g.data(), (n, 1), &mut db, 0.0);
                acc(grads, *a, Tensor::matrix(m, k, da).unwrap());
                acc(grads, *b, Tensor::matrix(k, n, db).unwrap());
            }
            Op::MatMulT(a, b) => {
                // c = a·bᵀ: da = g·b, db = gᵀ·a
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), (n, 1), tb.data(), (k, 1), &mut da, 0.0);
                let mut db = vec![0.0; n * k];
                gemm(n, m, k, g.data(), (1, n), ta.data(), (k, 1), &mut db, 0.0);
                acc(grads, *a, Tensor::matrix(m, k, da).unwrap());
                acc(grads, *b, Tensor::matrix(n, k, db).unwrap());
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                acc(grads, *b, g.map(|x| -x));
                acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let da = zip_tensor(&g, self.value(*b), |x, y| x * y);
                let db = zip_tensor(&g, self.value(*a), |x, y| x * y);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::AddRow(a, row) => {
                acc(grads, *row, column_sums(&g));
                acc(grads, *a, g);
            }
            Op::BroadcastRows(row) => acc(grads, *row, column_sums(&g)),
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                let n = ta.cols();
                let mut da = g.clone();
                let mut dc = vec![0.0; ta.rows()];
                for r in 0..ta.rows() {
                    let s = tc.data()[r];
                    for j in 0..n {
                        da.data_mut()[r * n + j] *= s;
                        dc[r] += g.data()[r * n + j] * ta.data()[r * n + j];
                    }
                }
                acc(grads, *a, da);
                acc(grads, *col, Tensor::matrix(ta.rows(), 1, dc).unwrap());
            }
            Op::Scale(a, s) => acc(grads, *a, g.map(|x| x * s)),
            Op::Tanh(a) => {
                let y = out.expect("tanh output");
                acc(grads, *a, zip_tensor(&g, y, |gx, yx| gx * (1.0 - yx * yx)));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(grads, *a, zip_tensor(&g, x, |gx, xx| if xx > 0.0 { gx } else { 0.0 }));
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let n = g.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut d = Vec::with_capacity(m * w);
                    for r in 0..m {
                        d.extend_from_slice(&g.data()[r * n + off..r * n + off + w]);
                    }
                    acc(grads, p, Tensor::matrix(m, w, d).unwrap());
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut off = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let d = g.data()[off * n..(off + rows) * n].to_vec();
                    acc(grads, p, Tensor::matrix(rows, n, d).unwrap());
                    off += rows;
                }
            }
            Op::GatherRows(a, idx) => {
                let t = self.value(*a);
                let n = t.cols();
                let mut d = Tensor::zeros(&[t.rows(), n]);
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g.data()[r * n..(r + 1) * n];
                    for (x, s) in d.data_mut()[i * n..(i + 1) * n].iter_mut().zip(src) {
                        *x += s;
                    }
                }
                acc(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let t = self.value(*a);
                let (m, n, w) = (t.rows(), t.cols(), g.cols());
                let mut d = Tensor::zeros(&[m, n]);
                for r in 0..m {
                    d.data_mut()[r * n + start..r * n + start + w].copy_from_slice(g.row(r));
                }
                acc(grads, *a, d);
            }
            Op::Softmax(a) => {
                let y = out.expect("softmax output");
                let n = y.cols();
                let mut d = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(grads, *a, Tensor::matrix(y.rows(), n, d).unwrap());
            }
            Op::MaskedMaxPool(a, argmax) | Op::SegmentMax(a, argmax) => {
                let t = self.value(*a);
                let d = t.cols();
                let mut dx = Tensor::zeros(&[t.rows(), d]);
                for (slot, &r) in argmax.iter().enumerate() {
                    if r != usize::MAX {
                        dx.data_mut()[r * d + slot % d] += g.data()[slot];
                    }
                }
                acc(grads, *a, dx);
            }
            Op::SegmentSum(a, ranges) => {
                let t = self.value(*a);
                let d = t.cols();
                let mut dx = Tensor::zeros(&[t.rows(), d]);
                for (s, &(start, len)) in ranges.iter().enumerate() {
                    for r in start..start + len {
                        for j in 0..d {
                            dx.data_mut()[r * d + j] += g.data()[s * d + j];
                        }
                    }
                }
                acc(grads, *a, dx);
            }
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            } => {
                let (dq, dk, dv) = attention_backward(
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    &g,
                    *seq_len,
                    *heads,
                    probs,
                );
                acc(grads, *q, dq);
                acc(grads, *k, dk);
                acc(grads, *v, dv);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let tg = self.value(*gamma);
                let d = g.cols();
                let rows = g.rows();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = vec![0.0; rows * d];
                let mut dn = vec![0.0; d];
                for r in 0..rows {
                    let gr = g.row(r);
                    let nr = &normed[r * d..(r + 1) * d];
                    for j in 0..d {
                        dgamma[j] += gr[j] * nr[j];
                        dbeta[j] += gr[j];
                        dn[j] = gr[j] * tg.data()[j];
                    }
                    let mean_dn = dn.iter().sum::<f64>() / d as f64;
                    let mean_dn_n = dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = inv_std[r] * (dn[j] - mean_dn - nr[j] * mean_dn_n);
                    }
                }
                let gshape = tg.shape().to_vec();
                acc(grads, *x, Tensor::matrix(rows, d, dx).unwrap());
                acc(grads, *gamma, Tensor::new(gshape.clone(), dgamma).unwrap());
                acc(grads, *beta, Tensor::new(gshape, dbeta).unwrap());
            }
            Op::CosineRows(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, d) = (ta.rows(), ta.cols());
                let mut da = vec![0.0; m * d];
                let mut db = vec![0.0; m * d];
                for r in 0..m {
                    let (ar, br) = (ta.row(r), tb.row(r));
                    let Some(c) = cosine_parts(ar, br) else { continue };
                    let gr = g.data()[r];
                    let inv = 1.0 / (c.norm_a * c.norm_b);
                    for j in 0..d {
                        da[r * d + j] =
                            gr * (br[j] * inv - c.cos * ar[j] / (c.norm_a * c.norm_a));
                        db[r * d + j] =
                            gr * (ar[j] * inv - c.cos * br[j] / (c.norm_b * c.norm_b));
                    }
                }
                acc(grads, *a, Tensor::matrix(m, d, da).unwrap());
                acc(grads, *b, Tensor::matrix(m, d, db).unwrap());
            }
            Op::WeightedSum(a, w) => {
                let s = g.data()[0];
                let t = self.value(*a);
                let d = w.data().iter().map(|x| x * s).collect();
                acc(grads, *a, Tensor::new(t.shape().to_vec(), d).unwrap());
            }
            Op::SoftmaxBce {
                logits,
                labels,
                probs,
            } => {
                let s = g.data()[0] / labels.len() as f64;
                let mut d = vec![0.0; labels.len() * 2];
                for (r, (&y, &p1)) in labels.iter().zip(probs).enumerate() {
                    // dL/dp1, zero where the clamp is active
                    let mut dp = 0.0;
                    if p1 > LOG_CLAMP {
                        dp -= y / p1;
                    }
                    if 1.0 - p1 > LOG_CLAMP {
                        dp += (1.0 - y) / (1.0 - p1);
                    }
                    // p1 = σ(z1 − z0)
                    let dz = dp * p1 * (1.0 - p1) * s;
                    d[r * 2] = -dz;
                    d[r * 2 + 1] = dz;
                }
                acc(grads, *logits, Tensor::matrix(labels.len(), 2, d).unwrap());
            }
        }
    }
}

/// Class-1 probability of a two-way softmax.
pub fn two_way_softmax(z0: f64, z1: f64) -> f64 {
    let diff = z1 - z0;
    if diff >= 0.0 {
        1.0 / (1.0 + (-diff).exp())
    } else {
        let e = diff.exp();
        e / (1.0 + e)
    }
}

struct CosineParts {
    cos: f64,
    norm_a: f64,
    norm_b: f64,
}

fn cosine_parts(a: &[f64], b: &[f64]) -> Option<CosineParts> {
    let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a < COSINE_EPS || norm_b < COSINE_EPS {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some(CosineParts {
        cos: (dot / (norm_a * norm_b)).clamp(-1.0, 1.0),
        norm_a,
        norm_b,
    })
}

fn zip_tensor(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn column_sums(g: &Tensor) -> Tensor {
    let n = g.cols();
    let mut d = vec![0.0; n];
    for r in 0..g.rows() {
        for (acc, x) in d.iter_mut().zip(g.row(r)) {
            *acc += x;
        }
    }
    Tensor::row_vector(d)
}

fn attention_backward(
    tq: &Tensor,
    tk: &Tensor,
    tv: &Tensor,
    g: &Tensor,
    seq_len: usize,
    heads: usize,
    probs: &[f64],
) -> (Tensor, Tensor, Tensor) {
    let (rows, d) = (tq.rows(), tq.cols());
    let b = rows / seq_len;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qd, kd, vd, gd) = (tq.data(), tk.data(), tv.data(), g.data());
    let mut dq = vec![0.0; rows * d];
    let mut dk = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    let mut dp = vec![0.0; seq_len];
    for s in 0..b {
        let base = s * seq_len;
        for h in 0..heads {
            let off = h * dh;
            for i in 0..seq_len {
                let p = &probs[((s * heads + h) * seq_len + i) * seq_len..][..seq_len];
                let gi = &gd[(base + i) * d + off..][..dh];
                let mut dot = 0.0;
                for j in 0..seq_len {
                    if p[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let vj = &vd[(base + j) * d + off..][..dh];
                    dp[j] = gi.iter().zip(vj).map(|(x, y)| x * y).sum();
                    dot += p[j] * dp[j];
                    let dvj = &mut dv[(base + j) * d + off..][..dh];
                    for (acc, gx) in dvj.iter_mut().zip(gi) {
                        *acc += p[j] * gx;
                    }
                }
                for j in 0..seq_len {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    for c in 0..dh {
                        dq[(base + i) * d + off + c] += ds * kd[(base + j) * d + off + c];
                        dk[(base + j) * d + off + c] += ds * qd[(base + i) * d + off + c];
                    }
                }
            }
        }
    }
    (
        Tensor::matrix(rows, d, dq).unwrap(),
        Tensor::matrix(rows, d, dk).unwrap(),
        Tensor::matrix(rows, d, dv).unwrap(),
    )
}
