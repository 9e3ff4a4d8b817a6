//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operation evaluates
//! eagerly, stores its value, and records which nodes it was computed from.
//! Because a node can only reference nodes created before it, the graph is
//! acyclic by construction and [`Graph::backward`] is a single reverse sweep.
//!
//! Parameters live outside the graph in a [`ParamStore`]. A fresh graph is
//! built for every forward pass; [`Graph::param`] snapshots a parameter into
//! the graph once and returns the same [`Var`] on repeated calls.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::tensor::{gemm, softmax_in_place, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean keep-mask shared between ops; `true` marks a live entry.
pub type Mask = Arc<Vec<bool>>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, row: Var },
    BroadcastRows { x: Var },
    Scale { x: Var, k: f64 },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Softmax { x: Var },
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Transpose(Var),
    Gather { table: Var, ids: Vec<usize> },
    MaxPoolRows { x: Var, argmax: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Dropout { x: Var, mask: Vec<f64> },
    BceWithLogits { logits: Var, targets: Vec<f64> },
    SmoothedNll {
        logits: Var,
        /// Per-row target distribution targets; `None` rows are excluded.
        targets: Vec<Option<usize>>,
        eps: f64,
        probs: Vec<f64>,
        count: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Arena of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar loss with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn rank2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(TensorError::Rank {
            op,
            expected: 2,
            shape: s.to_vec(),
        }),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked (inputs under test, free variables).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Snapshot a stored parameter into the graph (deduplicated per graph).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    /// Parameter snapshot without gradient tracking (inference).
    pub fn param_frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, false);
        self.params.insert(id, v);
        v
    }

    // ---- linear algebra -------------------------------------------------

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, true)
    }

    /// `op(a) · op(b)` where `op` transposes when the matching flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (ar, ac) = rank2(av, "matmul")?;
        let (br, bc) = rank2(bv, "matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(ta, tb, m, k, n, av.data(), bv.data(), &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose()?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn zip(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let av = self.value(a);
        let bv = self.value(b);
        same_shape(op, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `x + row` with `row` of shape `[1, cols]` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let xv = self.value(x);
        let rv = self.value(row);
        let (_, c) = rank2(xv, "add_row")?;
        if rv.shape() != [1, c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: xv.shape().to_vec(),
                right: rv.shape().to_vec(),
            });
        }
        let mut t = xv.clone();
        for r in t.data_mut().chunks_mut(c) {
            for (a, b) in r.iter_mut().zip(rv.data()) {
                *a += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(t, Op::AddRow { x, row }, rg))
    }

    /// Repeat a `[1, cols]` row `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = rank2(xv, "broadcast_rows")?;
        if r != 1 || rows == 0 {
            return Err(TensorError::Rank {
                op: "broadcast_rows",
                expected: 2,
                shape: xv.shape().to_vec(),
            });
        }
        let data = xv.data().repeat(rows);
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(rows, c, data), Op::BroadcastRows { x }, rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x).map(|v| v * k);
        let rg = self.rg(x);
        self.push(t, Op::Scale { x, k }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::ln);
        let rg = self.rg(x);
        self.push(t, Op::Log(x), rg)
    }

    // ---- normalisation --------------------------------------------------

    /// Row-wise softmax (last axis).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_masked(x, None)
    }

    /// Softmax over `axis` (0 or 1) of a rank-2 tensor.
    pub fn softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        match axis {
            1 => self.softmax(x),
            0 => {
                let t = self.transpose(x)?;
                let s = self.softmax(t)?;
                self.transpose(s)
            }
            _ => Err(TensorError::InvalidAxis {
                axis,
                shape: self.shape(x).to_vec(),
            }),
        }
    }

    /// Row-wise softmax restricted to entries where `mask` is true.
    ///
    /// Masked entries receive exactly zero probability and never influence
    /// the result; a row with no live entries produces all zeros.
    pub fn softmax_masked(&mut self, x: Var, mask: Option<&Mask>) -> Result<Var> {
        let xv = self.value(x);
        let (_, c) = rank2(xv, "softmax")?;
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(TensorError::Invalid(format!(
                    "softmax mask of length {} for shape {:?}",
                    m.len(),
                    xv.shape()
                )));
            }
        }
        let mut t = xv.clone();
        match mask {
            None => t.data_mut().chunks_mut(c).for_each(softmax_in_place),
            Some(m) => {
                for (row, keep) in t.data_mut().chunks_mut(c).zip(m.chunks(c)) {
                    masked_softmax_row(row, keep);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax { x }, rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (_, c) = rank2(xv, "log_softmax")?;
        let mut t = xv.clone();
        for row in t.data_mut().chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(x);
        Ok(self.push(t, Op::LogSoftmax(x), rg))
    }

    /// Layer normalisation over the last axis with population variance.
    /// `gain` and `bias` are `[1, cols]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (_, c) = rank2(xv, "layer_norm")?;
        for p in [gain, bias] {
            if self.value(p).shape() != [1, c] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    left: xv.shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = xv.clone();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(xv.rows());
        for (row, xh) in out.data_mut().chunks_mut(c).zip(xhat.chunks_mut(c)) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + eps).sqrt();
            inv_std.push(r);
            for j in 0..c {
                xh[j] = (row[j] - mean) * r;
                row[j] = xh[j] * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    // ---- structural -----------------------------------------------------

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::EmptyAxis { op: "concat_cols" })?;
        let (r, _) = rank2(self.value(*first), "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = rank2(self.value(p), "concat_cols")?;
            if pr != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(*first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(r, total, data), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = rank2(xv, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                start,
                end: start + len,
                extent: c,
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(r, len, data), Op::SliceCols { x, start }, rg))
    }

    /// Split columns into consecutive blocks of the given widths.
    pub fn split_cols(&mut self, x: Var, widths: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice_cols(x, start, w)?);
            start += w;
        }
        if start != self.value(x).cols() {
            return Err(TensorError::OutOfRange {
                op: "split_cols",
                start: 0,
                end: start,
                extent: self.value(x).cols(),
            });
        }
        Ok(out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::EmptyAxis { op: "concat_rows" })?;
        let (_, c) = rank2(self.value(*first), "concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = rank2(self.value(p), "concat_rows")?;
            if pc != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(*first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            data.extend_from_slice(self.value(p).data());
            rows += pr;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, c, data), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = rank2(xv, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(TensorError::OutOfRange {
                op: "slice_rows",
                start,
                end: start + len,
                extent: r,
            });
        }
        let data = xv.data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(len, c, data), Op::SliceRows { x, start }, rg))
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, c) = rank2(tv, "gather_rows")?;
        if ids.is_empty() {
            return Err(TensorError::EmptyAxis { op: "gather_rows" });
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::BadIndex { id, rows });
            }
            data.extend_from_slice(tv.row(id));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), c, data),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Column-wise maximum over the rows of `x`, giving `[1, cols]`.
    /// Gradient flows to the first (lowest-index) maximal row.
    pub fn maxpool_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = rank2(xv, "maxpool")?;
        let mut argmax = vec![0usize; c];
        let mut best = xv.row(0).to_vec();
        for i in 1..r {
            for (j, &v) in xv.row(i).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::row_vector(best), Op::MaxPoolRows { x, argmax }, rg))
    }

    /// Max-pool over a list of row blocks; an empty list is an error.
    pub fn maxpool_over(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::EmptyAxis { op: "maxpool" });
        }
        let stacked = if parts.len() == 1 {
            parts[0]
        } else {
            self.concat_rows(parts)?
        };
        self.maxpool_rows(stacked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / v.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Inverted dropout: entries are zeroed with probability `p` and the
    /// survivors scaled by `1/(1-p)`. `p == 0` returns `x` unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl Rng) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Dropout { x, mask }, rg)
    }

    // ---- losses ---------------------------------------------------------

    /// Mean binary cross entropy between `sigmoid(logits)` and soft targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != targets.len() {
            return Err(TensorError::Invalid(format!(
                "bce: {} logits for {} targets",
                lv.len(),
                targets.len()
            )));
        }
        let n = targets.len() as f64;
        let loss = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - y * z + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Label-smoothed negative log-likelihood, averaged over rows whose
    /// target is `Some`. The smoothed target puts `1 - eps` on the gold
    /// class and `eps / (V - 1)` on every other class.
    pub fn smoothed_nll(&mut self, logits: Var, targets: &[Option<usize>], eps: f64) -> Result<Var> {
        let lv = self.value(logits);
        let (r, v) = rank2(lv, "smoothed_nll")?;
        if r != targets.len() {
            return Err(TensorError::Invalid(format!(
                "smoothed_nll: {r} rows for {} targets",
                targets.len()
            )));
        }
        let off = if v > 1 { eps / (v - 1) as f64 } else { 0.0 };
        let on = if v > 1 { 1.0 - eps } else { 1.0 };
        let mut probs = vec![0.0; r * v];
        let mut total = 0.0;
        let mut count = 0;
        for (i, t) in targets.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            let p = &mut probs[i * v..(i + 1) * v];
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - lse).exp();
            }
            if let Some(t) = *t {
                if t >= v {
                    return Err(TensorError::BadIndex { id: t, rows: v });
                }
                count += 1;
                let mut l = 0.0;
                for (j, &x) in row.iter().enumerate() {
                    let q = if j == t { on } else { off };
                    if q != 0.0 {
                        l -= q * (x - lse);
                    }
                }
                total += l;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothedNll {
                logits,
                targets: targets.to_vec(),
                eps,
                probs,
                count,
            },
            rg,
        ))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0]).expect("scalar"));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(dy);
                continue;
            }
            self.backprop_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let av = self.value(a);
                let bv = self.value(b);
                let (m, n) = (y.rows(), y.cols());
                let k = if ta { av.rows() } else { av.cols() };
                if self.rg(a) {
                    let ga = slot(grads, a, av);
                    if ta {
                        // A is k×m: dA = op(B) · dYᵀ
                        gemm(tb, true, k, n, m, bv.data(), dy.data(), ga.data_mut(), 1.0);
                    } else {
                        gemm(false, !tb, m, n, k, dy.data(), bv.data(), ga.data_mut(), 1.0);
                    }
                }
                if self.rg(b) {
                    let gb = slot(grads, b, bv);
                    if tb {
                        // B is n×k: dB = dYᵀ · op(A)
                        gemm(true, ta, n, m, k, dy.data(), av.data(), gb.data_mut(), 1.0);
                    } else {
                        gemm(!ta, false, k, m, n, av.data(), dy.data(), gb.data_mut(), 1.0);
                    }
                }
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, |g| axpy(g, dy.data(), 1.0));
                self.acc(grads, b, |g| axpy(g, dy.data(), 1.0));
            }
            &Op::Sub(a, b) => {
                self.acc(grads, a, |g| axpy(g, dy.data(), 1.0));
                self.acc(grads, b, |g| axpy(g, dy.data(), -1.0));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.acc(grads, a, |g| {
                    for ((g, d), y) in g.iter_mut().zip(dy.data()).zip(bv) {
                        *g += d * y;
                    }
                });
                self.acc(grads, b, |g| {
                    for ((g, d), x) in g.iter_mut().zip(dy.data()).zip(av) {
                        *g += d * x;
                    }
                });
            }
            &Op::AddRow { x, row } => {
                self.acc(grads, x, |g| axpy(g, dy.data(), 1.0));
                let c = dy.cols();
                self.acc(grads, row, |g| {
                    for r in dy.data().chunks(c) {
                        axpy(g, r, 1.0);
                    }
                });
            }
            &Op::BroadcastRows { x } => {
                let c = dy.cols();
                self.acc(grads, x, |g| {
                    for r in dy.data().chunks(c) {
                        axpy(g, r, 1.0);
                    }
                });
            }
            &Op::Scale { x, k } => self.acc(grads, x, |g| axpy(g, dy.data(), k)),
            &Op::Relu(x) => {
                let xv = self.value(x).data();
                self.acc(grads, x, |g| {
                    for ((g, d), v) in g.iter_mut().zip(dy.data()).zip(xv) {
                        if *v > 0.0 {
                            *g += d;
                        }
                    }
                });
            }
            &Op::Tanh(x) => self.acc(grads, x, |g| {
                for ((g, d), t) in g.iter_mut().zip(dy.data()).zip(y.data()) {
                    *g += d * (1.0 - t * t);
                }
            }),
            &Op::Sigmoid(x) => self.acc(grads, x, |g| {
                for ((g, d), s) in g.iter_mut().zip(dy.data()).zip(y.data()) {
                    *g += d * s * (1.0 - s);
                }
            }),
            &Op::Log(x) => {
                let xv = self.value(x).data();
                self.acc(grads, x, |g| {
                    for ((g, d), v) in g.iter_mut().zip(dy.data()).zip(xv) {
                        *g += d / v;
                    }
                });
            }
            &Op::Softmax { x } => {
                let c = y.cols();
                self.acc(grads, x, |g| {
                    for ((g, d), p) in g.chunks_mut(c).zip(dy.data().chunks(c)).zip(y.data().chunks(c)) {
                        let dot: f64 = d.iter().zip(p).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            g[j] += p[j] * (d[j] - dot);
                        }
                    }
                });
            }
            &Op::LogSoftmax(x) => {
                let c = y.cols();
                self.acc(grads, x, |g| {
                    for ((g, d), l) in g.chunks_mut(c).zip(dy.data().chunks(c)).zip(y.data().chunks(c)) {
                        let s: f64 = d.iter().sum();
                        for j in 0..c {
                            g[j] += d[j] - l[j].exp() * s;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = y.cols();
                let gv = self.value(*gain).data();
                self.acc(grads, *gain, |g| {
                    for (d, xh) in dy.data().chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            g[j] += d[j] * xh[j];
                        }
                    }
                });
                self.acc(grads, *bias, |g| {
                    for d in dy.data().chunks(c) {
                        axpy(g, d, 1.0);
                    }
                });
                self.acc(grads, *x, |g| {
                    let nf = c as f64;
                    let mut dxh = vec![0.0; c];
                    for (((g, d), xh), &r) in g
                        .chunks_mut(c)
                        .zip(dy.data().chunks(c))
                        .zip(xhat.chunks(c))
                        .zip(inv_std)
                    {
                        for j in 0..c {
                            dxh[j] = d[j] * gv[j];
                        }
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            g[j] += r / nf * (nf * dxh[j] - s1 - xh[j] * s2);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.acc(grads, p, |g| {
                        for (gr, dr) in g.chunks_mut(w).zip(dy.data().chunks(total)) {
                            axpy(gr, &dr[off..off + w], 1.0);
                        }
                    });
                    off += w;
                }
            }
            &Op::SliceCols { x, start } => {
                let w = y.cols();
                let c = self.value(x).cols();
                self.acc(grads, x, |g| {
                    for (gr, dr) in g.chunks_mut(c).zip(dy.data().chunks(w)) {
                        axpy(&mut gr[start..start + w], dr, 1.0);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc(grads, p, |g| axpy(g, &dy.data()[off..off + n], 1.0));
                    off += n;
                }
            }
            &Op::SliceRows { x, start } => {
                let c = y.cols();
                let n = y.len();
                self.acc(grads, x, |g| axpy(&mut g[start * c..start * c + n], dy.data(), 1.0));
            }
            &Op::Transpose(x) => {
                let t = dy.transpose().expect("rank 2");
                self.acc(grads, x, |g| axpy(g, t.data(), 1.0));
            }
            Op::Gather { table, ids } => {
                let c = y.cols();
                self.acc(grads, *table, |g| {
                    for (k, &id) in ids.iter().enumerate() {
                        axpy(&mut g[id * c..(id + 1) * c], &dy.data()[k * c..(k + 1) * c], 1.0);
                    }
                });
            }
            Op::MaxPoolRows { x, argmax } => {
                let c = y.cols();
                self.acc(grads, *x, |g| {
                    for (j, &r) in argmax.iter().enumerate() {
                        g[r * c + j] += dy.data()[j];
                    }
                });
            }
            &Op::Sum(x) => {
                let d = dy.item();
                self.acc(grads, x, |g| g.iter_mut().for_each(|v| *v += d));
            }
            &Op::Mean(x) => {
                let d = dy.item() / self.value(x).len() as f64;
                self.acc(grads, x, |g| g.iter_mut().for_each(|v| *v += d));
            }
            Op::Dropout { x, mask } => self.acc(grads, *x, |g| {
                for ((g, d), m) in g.iter_mut().zip(dy.data()).zip(mask) {
                    *g += d * m;
                }
            }),
            Op::BceWithLogits { logits, targets } => {
                let d = dy.item() / targets.len() as f64;
                let lv = self.value(*logits).data();
                self.acc(grads, *logits, |g| {
                    for ((g, &z), &t) in g.iter_mut().zip(lv).zip(targets) {
                        *g += d * (sigmoid(z) - t);
                    }
                });
            }
            Op::SmoothedNll {
                logits,
                targets,
                eps,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let v = self.value(*logits).cols();
                let off = if v > 1 { eps / (v - 1) as f64 } else { 0.0 };
                let on = if v > 1 { 1.0 - eps } else { 1.0 };
                let d = dy.item() / *count as f64;
                self.acc(grads, *logits, |g| {
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let p = &probs[i * v..(i + 1) * v];
                        let gr = &mut g[i * v..(i + 1) * v];
                        for j in 0..v {
                            let q = if j == t { on } else { off };
                            gr[j] += d * (p[j] - q);
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if self.rg(v) {
            let g = slot(grads, v, self.value(v));
            f(g.data_mut());
        }
    }

    /// Add the gradients of every parameter used in this graph into `buf`,
    /// multiplied by `weight`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, buf: &mut GradBuffer, weight: f64) {
        let mut ids: Vec<_> = self.params.iter().collect();
        ids.sort_by_key(|(id, _)| **id);
        for (&id, &v) in ids {
            if let Some(g) = grads.get(v) {
                buf.add_scaled(id, g, weight);
            }
        }
    }

    /// Vars of the parameters snapshotted into this graph, ordered by id.
    pub fn param_vars(&self) -> Vec<(ParamId, Var)> {
        let mut v: Vec<_> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        v.sort_by_key(|(id, _)| *id);
        v
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros_like(like))
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn masked_softmax_row(row: &mut [f64], keep: &[bool]) {
    let max = row
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut z = 0.0;
    for (v, &k) in row.iter_mut().zip(keep) {
        *v = if k { (*v - max).exp() } else { 0.0 };
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}
