//! Hierarchical transformer encoder.
//!
//! The title and the ranked paragraphs are laid out as `U` units of `T`
//! token slots each, flattened to `N = U·T` rows. Local layers attend within
//! a unit; global layers pool every unit into per-head vectors, let units
//! attend to each other, and broadcast the result back to the tokens.

use hiersumm_tensor::{Mask, ParamId, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graphs::ParaGraph;
use crate::nn::{attend, mask_from, sinusoid, Builder, Ctx, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::text::{TokenId, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphSlot {
    None,
    Similarity,
    Discourse,
}

impl GraphSlot {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GraphSlot::None),
            "similarity" => Ok(GraphSlot::Similarity),
            "discourse" => Ok(GraphSlot::Discourse),
            _ => Err(Error::Config(format!("unknown graph kind {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GraphSlot::None => "none",
            GraphSlot::Similarity => "similarity",
            GraphSlot::Discourse => "discourse",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab: usize,
    pub d: usize,
    pub d_ff: usize,
    pub n_head: usize,
    pub n_local: usize,
    pub n_global: usize,
    /// Paragraphs fed to the encoder after ranking.
    pub lprime: usize,
    /// Token budget over all paragraphs; each unit keeps `total_tokens / lprime`.
    pub total_tokens: usize,
    pub use_paragraph_pos: bool,
    /// Pooling / inter-paragraph heads; defaults to `n_head`.
    pub pool_heads: Option<usize>,
    pub use_global_layers: bool,
    pub graph: GraphSlot,
    pub normalized_pooling: bool,
    pub scale_inter_attention: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab: 2000,
            d: 64,
            d_ff: 128,
            n_head: 8,
            n_local: 5,
            n_global: 2,
            lprime: 24,
            total_tokens: 1600,
            use_paragraph_pos: true,
            pool_heads: None,
            use_global_layers: true,
            graph: GraphSlot::None,
            normalized_pooling: true,
            scale_inter_attention: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d % 2 != 0 {
            return Err(Error::Config(format!("d = {} must be even and positive", self.d)));
        }
        for (name, h) in [("n_head", self.n_head), ("pool_heads", self.pool_heads())] {
            if h == 0 || self.d % h != 0 {
                return Err(Error::Config(format!("d = {} is not divisible by {name} = {h}", self.d)));
            }
        }
        if self.lprime == 0 || self.total_tokens < self.lprime {
            return Err(Error::Config(format!(
                "total_tokens = {} must be at least lprime = {}",
                self.total_tokens, self.lprime
            )));
        }
        Ok(())
    }

    pub fn pool_heads(&self) -> usize {
        self.pool_heads.unwrap_or(self.n_head)
    }

    pub fn para_tokens(&self) -> usize {
        self.total_tokens / self.lprime
    }

    pub fn global_layers(&self) -> usize {
        if self.use_global_layers {
            self.n_global
        } else {
            0
        }
    }
}

/// Unit/token layout of one encoder input.
#[derive(Clone, Debug)]
pub struct Layout {
    pub units: usize,
    pub slots: usize,
    pub tokens: Vec<TokenId>,
    pub real: Vec<bool>,
    pub unit_real: Vec<bool>,
    /// `[N × N]`: same unit and real key.
    pub local_mask: Mask,
    /// `[U × N]`: token belongs to the unit and is real.
    pub pool_mask: Mask,
    /// `[U × U]`: key unit has at least one real token.
    pub unit_mask: Mask,
    /// Row-normalised graph over units, when a graph is supplied.
    pub graph: Option<Tensor>,
}

impl Layout {
    pub fn rows(&self) -> usize {
        self.units * self.slots
    }

    /// Cross-attention mask for `queries` decoder rows over this memory.
    pub fn memory_mask(&self, queries: usize) -> Mask {
        let mut m = Vec::with_capacity(queries * self.real.len());
        for _ in 0..queries {
            m.extend_from_slice(&self.real);
        }
        mask_from(m)
    }

    /// `[N × U]` 0/1 matrix sending unit vectors to their tokens.
    fn assignment(&self) -> Tensor {
        let (n, u) = (self.rows(), self.units);
        let mut t = Tensor::zeros(n, u);
        for r in 0..n {
            t.data_mut()[r * u + r / self.slots] = 1.0;
        }
        t
    }

    fn pool_mask_tensor(&self) -> Tensor {
        let data = self.pool_mask.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        Tensor::matrix(self.units, self.rows(), data)
    }
}

/// Build the layout for `title` followed by the ranked `paragraphs`; each
/// unit is cut to `budget` tokens. A `graph` over the paragraphs is lifted to
/// the units (the title row and column stay empty), its diagonal dropped,
/// and each row normalised; rows with no weight become uniform over the real
/// units.
pub fn layout(title: &[TokenId], paragraphs: &[&[TokenId]], budget: usize, graph: Option<&ParaGraph>) -> Result<Layout> {
    if paragraphs.is_empty() {
        return Err(Error::Data("encoder input has no paragraphs".into()));
    }
    let cut = |s: &[TokenId]| s.iter().copied().take(budget).collect::<Vec<_>>();
    let mut units = vec![cut(title)];
    units.extend(paragraphs.iter().map(|p| cut(p)));
    let u = units.len();
    let t = units.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let n = u * t;
    let mut tokens = vec![PAD; n];
    let mut real = vec![false; n];
    for (k, unit) in units.iter().enumerate() {
        for (j, &id) in unit.iter().enumerate() {
            tokens[k * t + j] = id;
            real[k * t + j] = true;
        }
    }
    let unit_real: Vec<bool> = units.iter().map(|x| !x.is_empty()).collect();
    if !unit_real.iter().any(|&r| r) {
        return Err(Error::Data("encoder input has no tokens".into()));
    }
    let local_mask = mask_from((0..n * n).map(|k| (k / n) / t == (k % n) / t && real[k % n]).collect());
    let pool_mask = mask_from((0..u * n).map(|k| (k % n) / t == k / n && real[k % n]).collect());
    let unit_mask = mask_from((0..u * u).map(|k| unit_real[k % u]).collect());
    let graph = match graph {
        None => None,
        Some(g) => Some(unit_graph(g, &unit_real)?),
    };
    Ok(Layout {
        units: u,
        slots: t,
        tokens,
        real,
        unit_real,
        local_mask,
        pool_mask,
        unit_mask,
        graph,
    })
}

/// Lift a paragraph graph to units and row-normalise it.
pub fn unit_graph(g: &ParaGraph, unit_real: &[bool]) -> Result<Tensor> {
    let u = unit_real.len();
    if g.n + 1 != u {
        return Err(Error::Graph(format!("graph over {} paragraphs for {} selected paragraphs", g.n, u - 1)));
    }
    let mut w = Tensor::zeros(u, u);
    let live = unit_real.iter().filter(|&&r| r).count() as f64;
    for i in 0..u {
        let row = &mut w.data_mut()[i * u..(i + 1) * u];
        if i > 0 {
            for j in 1..u {
                if j != i && unit_real[j] {
                    row[j] = g.get(i - 1, j - 1);
                }
            }
        }
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
        } else {
            for (x, &r) in row.iter_mut().zip(unit_real) {
                *x = if r { 1.0 / live } else { 0.0 };
            }
        }
    }
    Ok(w)
}

/// `pe = [e_i; e_j]` for every row of the layout, each half a sinusoid of
/// width `d/2`. The paragraph half is zero when `use_paragraph_pos` is off.
pub fn positional_table(lay: &Layout, d: usize, use_paragraph_pos: bool) -> Tensor {
    let half = d / 2;
    let mut t = Tensor::zeros(lay.rows(), d);
    for r in 0..lay.rows() {
        let row = &mut t.data_mut()[r * d..(r + 1) * d];
        if use_paragraph_pos {
            row[..half].copy_from_slice(&sinusoid(r / lay.slots, half));
        }
        row[half..].copy_from_slice(&sinusoid(r % lay.slots, half));
    }
    t
}

#[derive(Clone, Debug)]
pub struct LocalLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

impl LocalLayer {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, cfg: &EncoderConfig) -> Self {
        b.scope(name, |b| LocalLayer {
            attn: MultiHeadAttention::new(b, "attn", cfg.d, cfg.n_head),
            ln1: LayerNorm::new(b, "ln1", cfg.d),
            ffn: FeedForward::new(b, "ffn", cfg.d, cfg.d_ff, true),
            ln2: LayerNorm::new(b, "ln2", cfg.d),
        })
    }

    pub fn fwd(&self, cx: &mut Ctx, x: Var, lay: &Layout) -> Result<Var> {
        let a = self.attn.fwd(cx, x, x, Some(&lay.local_mask))?;
        let h = cx.g.add(x, a)?;
        let h = self.ln1.fwd(cx, h)?;
        let f = self.ffn.fwd(cx, h)?;
        let o = cx.g.add(h, f)?;
        self.ln2.fwd(cx, o)
    }
}

#[derive(Clone, Debug)]
pub struct PoolHead {
    pub wc: Linear,
    pub ln: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

#[derive(Clone, Debug)]
pub struct GlobalLayer {
    pub n_pool: usize,
    pub normalized: bool,
    pub scaled: bool,
    /// Column `z` is the scoring vector of pooling head `z`.
    pub wa: Linear,
    pub wb: Linear,
    pub heads: Vec<PoolHead>,
    pub wc: Linear,
    pub wo1: Linear,
    pub wo2: Linear,
    pub ln: LayerNorm,
}

/// Intermediate values of a global layer's paragraph-level computation.
pub struct Contexts {
    /// Per head, pooling weights `[U × N]`.
    pub weights: Vec<Var>,
    /// Per head, pooled and normalised head vectors `[U × d_head]`.
    pub heads: Vec<Var>,
    /// Per head, value vectors `[U × d_head]`.
    pub values: Vec<Var>,
    /// Per head, inter-paragraph contexts `[U × d_head]`.
    pub contexts: Vec<Var>,
}

impl GlobalLayer {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, cfg: &EncoderConfig) -> Self {
        let hp = cfg.pool_heads();
        let dh = cfg.d / hp;
        b.scope(name, |b| GlobalLayer {
            n_pool: hp,
            normalized: cfg.normalized_pooling,
            scaled: cfg.scale_inter_attention,
            wa: Linear::new(b, "wa", cfg.d, hp, false),
            wb: Linear::new(b, "wb", cfg.d, cfg.d, false),
            heads: (0..hp)
                .map(|z| {
                    b.scope(&format!("head{z}"), |b| PoolHead {
                        wc: Linear::new(b, "wc", dh, dh, false),
                        ln: LayerNorm::new(b, "ln", dh),
                        q: Linear::new(b, "q", dh, dh, false),
                        k: Linear::new(b, "k", dh, dh, false),
                        v: Linear::new(b, "v", dh, dh, false),
                    })
                })
                .collect(),
            wc: Linear::new(b, "wc", cfg.d, cfg.d, false),
            wo1: Linear::new(b, "wo1", cfg.d, cfg.d_ff, false),
            wo2: Linear::new(b, "wo2", cfg.d_ff, cfg.d, false),
            ln: LayerNorm::new(b, "ln", cfg.d),
        })
    }

    /// Multi-head pooling followed by inter-paragraph attention. With a graph
    /// in the layout, the last head uses it instead of learned attention.
    pub fn contexts(&self, cx: &mut Ctx, x: Var, lay: &Layout) -> Result<Contexts> {
        let d = cx.g.shape(x)[1];
        let dh = d / self.n_pool;
        let a = self.wa.fwd(cx, x)?;
        let b = self.wb.fwd(cx, x)?;
        let pool_const = (!self.normalized).then(|| cx.c(lay.pool_mask_tensor()));
        let graph = lay.graph.clone().map(|g| cx.c(g));
        let scale = if self.scaled { 1.0 / (dh as f64).sqrt() } else { 1.0 };
        let mut out = Contexts {
            weights: Vec::new(),
            heads: Vec::new(),
            values: Vec::new(),
            contexts: Vec::new(),
        };
        for (z, hp) in self.heads.iter().enumerate() {
            let col = cx.g.slice_cols(a, z, 1)?;
            let row = cx.g.transpose(col)?;
            let scores = cx.g.broadcast_rows(row, lay.units)?;
            let w = match pool_const {
                None => cx.g.softmax_masked(scores, Some(&lay.pool_mask))?,
                Some(m) => cx.g.mul(scores, m)?,
            };
            let bz = cx.g.slice_cols(b, z * dh, dh)?;
            let pooled = cx.g.matmul(w, bz)?;
            let head = hp.wc.fwd(cx, pooled)?;
            let head = hp.ln.fwd(cx, head)?;
            let v = hp.v.fwd(cx, head)?;
            let ctx = match graph {
                Some(gm) if z + 1 == self.n_pool => cx.g.matmul(gm, v)?,
                _ => {
                    let q = hp.q.fwd(cx, head)?;
                    let k = hp.k.fwd(cx, head)?;
                    attend(cx, q, k, v, Some(&lay.unit_mask), scale)?
                }
            };
            out.weights.push(w);
            out.heads.push(head);
            out.values.push(v);
            out.contexts.push(ctx);
        }
        Ok(out)
    }

    pub fn fwd(&self, cx: &mut Ctx, x: Var, lay: &Layout) -> Result<Var> {
        let parts = self.contexts(cx, x, lay)?;
        let cat = cx.g.concat_cols(&parts.contexts)?;
        let c = self.wc.fwd(cx, cat)?;
        let assign = cx.c(lay.assignment());
        let ct = cx.g.matmul(assign, c)?;
        let xc = cx.g.add(x, ct)?;
        let h = self.wo1.fwd(cx, xc)?;
        let h = cx.g.relu(h);
        let gout = self.wo2.fwd(cx, h)?;
        let o = cx.g.add(gout, x)?;
        self.ln.fwd(cx, o)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub embedding: ParamId,
    pub local: Vec<LocalLayer>,
    pub global: Vec<GlobalLayer>,
}

impl Encoder {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        b.scope("encoder", |b| {
            let embedding = b.uniform("embedding", config.vocab, config.d, 0.1);
            let local = (0..config.n_local)
                .map(|i| LocalLayer::new(b, &format!("local{i}"), &config))
                .collect();
            let global = (0..config.global_layers())
                .map(|i| GlobalLayer::new(b, &format!("global{i}"), &config))
                .collect();
            Ok(Encoder {
                config,
                embedding,
                local,
                global,
            })
        })
    }

    /// Layout with this encoder's per-unit budget.
    pub fn layout(&self, title: &[TokenId], paragraphs: &[&[TokenId]], graph: Option<&ParaGraph>) -> Result<Layout> {
        if self.config.graph != GraphSlot::None && graph.is_none() {
            return Err(Error::Graph(format!("model expects a {} graph", self.config.graph.name())));
        }
        let graph = if self.config.graph == GraphSlot::None { None } else { graph };
        layout(title, paragraphs, self.config.para_tokens(), graph)
    }

    /// `x⁰ = w + pe` for every slot.
    pub fn embed(&self, cx: &mut Ctx, lay: &Layout) -> Result<Var> {
        let ids: Vec<usize> = lay.tokens.iter().map(|&t| t as usize).collect();
        let table = cx.p(self.embedding);
        let w = cx.g.embedding(table, &ids)?;
        let pe = cx.c(positional_table(lay, self.config.d, self.config.use_paragraph_pos));
        Ok(cx.g.add(w, pe)?)
    }

    /// Memory `[N × d]`; rows of pad slots are never read downstream.
    pub fn fwd(&self, cx: &mut Ctx, lay: &Layout) -> Result<Var> {
        let mut x = self.embed(cx, lay)?;
        for l in &self.local {
            x = l.fwd(cx, x, lay)?;
        }
        for l in &self.global {
            x = l.fwd(cx, x, lay)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::GraphKind;

    #[test]
    fn layout_masks() {
        let lay = layout(&[5], &[&[6, 7], &[8]], 10, None).unwrap();
        assert_eq!((lay.units, lay.slots), (3, 2));
        assert_eq!(lay.real, vec![true, false, true, true, true, false]);
        // Second slot of the title attends to the title's real token only.
        let n = 6;
        let row: Vec<bool> = lay.local_mask[n..2 * n].to_vec();
        assert_eq!(row, vec![true, false, false, false, false, false]);
    }

    #[test]
    fn unit_graph_normalises_and_falls_back() {
        let g = ParaGraph::new(GraphKind::Similarity, 2, vec![1.0, 1.0, 3.0, 1.0]).unwrap();
        let w = unit_graph(&g, &[true, true, true]).unwrap();
        assert_eq!(w.row(0), &[1.0 / 3.0; 3]);
        assert_eq!(w.row(1), &[0.0, 0.0, 1.0]);
        assert_eq!(w.row(2), &[0.0, 1.0, 0.0]);
        assert!(unit_graph(&g, &[true, true]).is_err());
    }

    #[test]
    fn odd_width_is_rejected() {
        let cfg = EncoderConfig {
            d: 7,
            n_head: 7,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
