//! Building blocks shared by the ranker, encoder and decoder.

use std::sync::Arc;

use hiersumm_tensor::{Graph, Mask, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub const LN_EPS: f64 = 1e-6;

/// One forward pass: a fresh graph over a borrowed parameter store.
pub struct Ctx<'s> {
    pub g: Graph,
    pub store: &'s ParamStore,
    track: bool,
    dropout: f64,
    rng: ChaCha8Rng,
}

impl<'s> Ctx<'s> {
    /// Gradient-tracking pass with dropout drawn from `seed`.
    pub fn train(store: &'s ParamStore, dropout: f64, seed: u64) -> Self {
        Self {
            g: Graph::new(),
            store,
            track: true,
            dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Gradient-tracking pass without dropout (gradient checks, validation).
    pub fn grad(store: &'s ParamStore) -> Self {
        Self::train(store, 0.0, 0)
    }

    /// Inference pass: no gradients, no dropout.
    pub fn eval(store: &'s ParamStore) -> Self {
        let mut c = Self::grad(store);
        c.track = false;
        c
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if self.track {
            self.g.param(self.store, id)
        } else {
            self.g.param_frozen(self.store, id)
        }
    }

    pub fn c(&mut self, t: Tensor) -> Var {
        self.g.constant(t)
    }

    pub fn drop(&mut self, x: Var) -> Var {
        let p = self.dropout;
        self.g.dropout(x, p, &mut self.rng)
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}

/// Names parameters under a dotted prefix.
pub struct Builder<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
    prefix: String,
}

impl<'a, R: Rng> Builder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Builder<'_, R>) -> T) -> T {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let mut b = Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        };
        f(&mut b)
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let n = self.full(name);
        self.store.add_xavier(n, rows, cols, self.rng)
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, scale: f64) -> ParamId {
        let n = self.full(name);
        self.store.add_uniform(n, rows, cols, scale, self.rng)
    }

    pub fn filled(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ParamId {
        let n = self.full(name);
        self.store.add_filled(n, rows, cols, v)
    }
}

/// `x · W (+ b)`, with dropout on the input.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, din: usize, dout: usize, bias: bool) -> Self {
        b.scope(name, |b| Linear {
            w: b.xavier("w", din, dout),
            b: bias.then(|| b.filled("b", 1, dout, 0.0)),
        })
    }

    pub fn fwd(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let x = cx.drop(x);
        self.fwd_nodrop(cx, x)
    }

    pub fn fwd_nodrop(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let w = cx.p(self.w);
        let y = cx.g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = cx.p(b);
                Ok(cx.g.add_row(y, b)?)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, dim: usize) -> Self {
        b.scope(name, |b| LayerNorm {
            gain: b.filled("gain", 1, dim, 1.0),
            bias: b.filled("bias", 1, dim, 0.0),
        })
    }

    pub fn fwd(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let g = cx.p(self.gain);
        let b = cx.p(self.bias);
        Ok(cx.g.layer_norm(x, g, b, LN_EPS)?)
    }
}

/// Position-wise feed-forward: `W2 · ReLU(W1 · x)`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, d: usize, d_ff: usize, bias: bool) -> Self {
        b.scope(name, |b| FeedForward {
            inner: Linear::new(b, "inner", d, d_ff, bias),
            outer: Linear::new(b, "outer", d_ff, d, bias),
        })
    }

    pub fn fwd(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.inner.fwd(cx, x)?;
        let h = cx.g.relu(h);
        self.outer.fwd(cx, h)
    }
}

/// Multi-head scaled dot-product attention with output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub n_head: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, d: usize, n_head: usize) -> Self {
        b.scope(name, |b| MultiHeadAttention {
            n_head,
            q: Linear::new(b, "q", d, d, true),
            k: Linear::new(b, "k", d, d, true),
            v: Linear::new(b, "v", d, d, true),
            out: Linear::new(b, "out", d, d, true),
        })
    }

    /// Key/value projections of `mem`, reusable across queries.
    pub fn project_kv(&self, cx: &mut Ctx, mem: Var) -> Result<(Var, Var)> {
        Ok((self.k.fwd(cx, mem)?, self.v.fwd(cx, mem)?))
    }

    pub fn fwd(&self, cx: &mut Ctx, x: Var, mem: Var, mask: Option<&Mask>) -> Result<Var> {
        let (k, v) = self.project_kv(cx, mem)?;
        self.fwd_kv(cx, x, k, v, mask)
    }

    /// `mask` is row-major `[queries × keys]`; `true` keeps an entry.
    pub fn fwd_kv(&self, cx: &mut Ctx, x: Var, k: Var, v: Var, mask: Option<&Mask>) -> Result<Var> {
        let q = self.q.fwd(cx, x)?;
        let d = cx.g.shape(q)[1];
        let dh = d / self.n_head;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_head);
        for z in 0..self.n_head {
            let qh = cx.g.slice_cols(q, z * dh, dh)?;
            let kh = cx.g.slice_cols(k, z * dh, dh)?;
            let vh = cx.g.slice_cols(v, z * dh, dh)?;
            heads.push(attend(cx, qh, kh, vh, mask, scale)?);
        }
        let cat = cx.g.concat_cols(&heads)?;
        self.out.fwd(cx, cat)
    }
}

/// `softmax_mask(scale · q kᵀ) · v`.
pub fn attend(cx: &mut Ctx, q: Var, k: Var, v: Var, mask: Option<&Mask>, scale: f64) -> Result<Var> {
    let s = cx.g.matmul_nt(q, k)?;
    let s = if scale != 1.0 { cx.g.scale(s, scale) } else { s };
    let p = cx.g.softmax_masked(s, mask)?;
    Ok(cx.g.matmul(p, v)?)
}

/// Sinusoid of width `dim` at position `pos`: even slots hold sines and odd
/// slots cosines, with wavelength `10000^(2i/dim)`.
pub fn sinusoid(pos: usize, dim: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    for i in 0..dim / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
        e[2 * i] = angle.sin();
        e[2 * i + 1] = angle.cos();
    }
    e
}

pub fn mask_from(v: Vec<bool>) -> Mask {
    Arc::new(v)
}

/// Lower-triangular `[n × n]` mask.
pub fn causal_mask(n: usize) -> Mask {
    mask_from((0..n * n).map(|k| k % n <= k / n).collect())
}
